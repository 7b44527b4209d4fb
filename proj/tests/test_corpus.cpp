#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>

#include "mrg/corpus.hpp"
#include "mrg/errors.hpp"
#include "mrg/graph.hpp"
#include "mrg/rng.hpp"
#include "mrg/vocab.hpp"

using mrg::KnowledgeGraph;
using mrg::NodeLabelVector;
using mrg::Sample;

TEST_CASE("knowledge graph structure") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  CHECK(g.nodes.size() == 27);
  CHECK(g.root() == "normal");
  CHECK(g.organs().size() == 7);
  CHECK(g.diseases().size() == 19);
  CHECK(g.index_of("effusion") >= 0);
  for (const char* required :
       {"effusion", "pleural", "pneumothorax", "calcinosis", "hypoinflation", "lesion",
        "foreign object", "opacity", "atelectasis", "emphysema", "pneumonia", "airspace disease",
        "bone fractures", "normal"})
    CHECK(g.index_of(required) >= 0);

  std::set<std::string> names(g.nodes.begin(), g.nodes.end());
  CHECK(names.size() == 27);
  for (const auto& d : g.diseases()) {
    REQUIRE(g.organ_of.count(d) == 1);
    CHECK(g.index_of(g.organ_of.at(d)) >= 1);  // a real organ node, not the root
  }
}

TEST_CASE("knowledge graph file round trip matches builtin") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const std::string path = "graph_roundtrip.txt";
  g.save(path);
  const KnowledgeGraph loaded = KnowledgeGraph::load(path);
  CHECK(loaded.nodes == g.nodes);
  CHECK(loaded.organ_of.size() == g.organ_of.size());
  for (const auto& [d, o] : g.organ_of) CHECK(loaded.organ_of.at(d) == o);
  std::remove(path.c_str());
}

TEST_CASE("checked-in graph file matches builtin") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const KnowledgeGraph file = KnowledgeGraph::load(std::string(MRG_SOURCE_DIR) +
                                                   "/data/knowledge_graph.txt");
  CHECK(file.nodes == g.nodes);
}

TEST_CASE("extract_nodes is mention based") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();

  NodeLabelVector v = mrg::extract_nodes(std::string("no pleural effusion"), g);
  CHECK(v[g.index_of("pleural")] == 1);
  CHECK(v[g.index_of("effusion")] == 1);
  CHECK(mrg::count_set(v) == 2);

  CHECK(mrg::count_set(mrg::extract_nodes(std::string(""), g)) == 0);

  std::string everything;
  for (const auto& n : g.nodes) everything += n + " ";
  CHECK(mrg::count_set(mrg::extract_nodes(everything, g)) == 27);

  // multi-word names require contiguity
  NodeLabelVector w = mrg::extract_nodes(std::string("airspace disease is present"), g);
  CHECK(w[g.index_of("airspace disease")] == 1);
  CHECK(w[g.index_of("airspace")] == 1);
  NodeLabelVector x = mrg::extract_nodes(std::string("airspace with no disease"), g);
  CHECK(x[g.index_of("airspace disease")] == 0);
  CHECK(x[g.index_of("airspace")] == 1);
}

TEST_CASE("generated corpus is deterministic and self-consistent") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const auto a = mrg::generate_corpus(50, 42, 1.5, g);
  const auto b = mrg::generate_corpus(50, 42, 1.5, g);
  REQUIRE(a.size() == 50);
  for (int i = 0; i < 50; ++i) {
    CHECK(a[i].report == b[i].report);
    CHECK(a[i].image.grid == b[i].image.grid);
    CHECK(a[i].node_labels == mrg::extract_nodes(a[i].report, g));
  }
  const auto c = mrg::generate_corpus(50, 43, 1.5, g);
  bool any_differs = false;
  for (int i = 0; i < 50; ++i)
    if (a[i].report != c[i].report) any_differs = true;
  CHECK(any_differs);
}

TEST_CASE("imbalanced corpus is long tailed") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const auto samples = mrg::generate_corpus(1000, 7, 1.5, g);
  const auto diseases = g.diseases();

  std::map<std::string, int> count;
  long total_positive = 0;
  std::vector<int> node_counts(27, 0);
  for (const auto& s : samples)
    for (int i = 0; i < 27; ++i)
      if (s.node_labels[i]) {
        ++node_counts[i];
        ++total_positive;
      }

  int max_disease = 0, min_disease = 1 << 30;
  for (const auto& d : diseases) {
    const int c = node_counts[g.index_of(d)];
    max_disease = std::max(max_disease, c);
    min_disease = std::min(min_disease, c);
  }
  CHECK(max_disease >= 10 * std::max(1, min_disease));

  // head-4 nodes cover more than half of the positive labels
  std::vector<int> sorted = node_counts;
  std::sort(sorted.rbegin(), sorted.rend());
  long head4 = sorted[0] + sorted[1] + sorted[2] + sorted[3];
  CHECK(double(head4) / double(total_positive) > 0.5);
}

TEST_CASE("exponent zero gives roughly uniform disease draws") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const int n = 4000;
  const auto samples = mrg::generate_corpus(n, 11, 0.0, g);
  const auto diseases = g.diseases();
  std::map<std::string, int> count;
  long draws = 0;
  for (const auto& s : samples)
    for (const auto& f : s.image.planted_findings) {
      ++count[f];
      ++draws;
    }
  const double p = 1.0 / diseases.size();
  const double expected = draws * p;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (const auto& d : diseases)
    CHECK(std::abs(count[d] - expected) <= 3.5 * sigma);
}

TEST_CASE("corrupt_labels calibration") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  NodeLabelVector v(27, 0);
  v[0] = v[3] = v[9] = 1;

  CHECK(mrg::corrupt_labels(v, 1.0, 5) == v);
  CHECK_THROWS_AS(mrg::corrupt_labels(v, 0.0, 5), mrg::ContractError);
  CHECK_THROWS_AS(mrg::corrupt_labels(v, 1.5, 5), mrg::ContractError);

  long agree = 0, cells = 0;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) {
    const auto w = mrg::corrupt_labels(v, 0.7, 1000 + t);
    for (int i = 0; i < 27; ++i) {
      agree += (w[i] == v[i]) ? 1 : 0;
      ++cells;
    }
  }
  CHECK(double(agree) / double(cells) == doctest::Approx(0.7).epsilon(0.015));

  // all-zero vector at 50%: about 13.5 bits set on average
  NodeLabelVector zero(27, 0);
  double mean_set = 0;
  const int t2 = 20000;
  for (int t = 0; t < t2; ++t) mean_set += mrg::count_set(mrg::corrupt_labels(zero, 0.5, 77 + t));
  mean_set /= t2;
  CHECK(mean_set == doctest::Approx(13.5).epsilon(0.03));
}

TEST_CASE("tokenize round trips on the template lexicon") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const mrg::Vocabulary vocab = mrg::build_report_vocabulary(g);

  CHECK(vocab.tokenize("").empty());
  CHECK(vocab.detokenize({}).empty());

  const auto two = vocab.tokenize("pleural effusion");
  REQUIRE(two.size() == 2);
  CHECK(vocab.detokenize(two) == "pleural effusion");

  const auto unk = vocab.tokenize("pleural xylophone");
  REQUIRE(unk.size() == 2);
  CHECK(unk[1] == mrg::Vocabulary::kUnk);

  // every generated report round-trips exactly
  for (const auto& s : mrg::generate_corpus(100, 3, 1.2, g))
    CHECK(vocab.detokenize(vocab.tokenize(s.report)) == s.report);

  // special ids are fixed and low
  CHECK(vocab.id("[PAD]") == 0);
  CHECK(vocab.id("[BOS]") == 1);
  CHECK(vocab.id("[EOS]") == 2);
  CHECK(vocab.id("[CLS]") == 3);
  CHECK(vocab.id("[ENC]") == 4);
  CHECK(vocab.id("[SEP]") == 5);
  CHECK(vocab.id("[MASK-NEG]") == 6);
  CHECK(vocab.id("[UNK]") == 7);
}

TEST_CASE("split_corpus is exact, disjoint, exhaustive, deterministic") {
  const auto s = mrg::split_corpus(100, 0.7, 0.1, 0.2, 9);
  CHECK(s.train.size() == 70);
  CHECK(s.val.size() == 10);
  CHECK(s.test.size() == 20);

  std::set<int> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (int i : *part) all.insert(i);
  CHECK(all.size() == 100);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 99);

  const auto again = mrg::split_corpus(100, 0.7, 0.1, 0.2, 9);
  CHECK(again.train == s.train);
  CHECK(again.val == s.val);
  CHECK(again.test == s.test);

  CHECK_THROWS_AS(mrg::split_corpus(100, 0.7, 0.1, 0.1, 9), mrg::ContractError);
}

TEST_CASE("corpus JSONL round trip") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  const auto samples = mrg::generate_corpus(20, 21, 1.5, g);
  const std::string path = "corpus_roundtrip.jsonl";
  mrg::save_corpus_jsonl(path, samples);
  const auto loaded = mrg::load_corpus_jsonl(path, g);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(loaded[i].report == samples[i].report);
    CHECK(loaded[i].node_labels == samples[i].node_labels);
    CHECK(loaded[i].image.grid == samples[i].image.grid);
  }
  std::remove(path.c_str());
}

TEST_CASE("distinct diseases render distinct glyph patterns") {
  const KnowledgeGraph g = mrg::build_node_vocabulary();
  // Two samples that each plant exactly one finding produce different images
  // in the disease's organ tile; two runs of the same finding place the glyph
  // in the same tile.
  const auto samples = mrg::generate_corpus(400, 13, 0.8, g);
  std::map<std::string, const Sample*> one_finding;
  for (const auto& s : samples)
    if (s.image.planted_findings.size() == 1)
      one_finding.emplace(s.image.planted_findings[0], &s);
  REQUIRE(one_finding.size() >= 5);
  // any two different single-finding images differ somewhere beyond noise
  int checked = 0;
  for (auto it = one_finding.begin(); it != one_finding.end(); ++it)
    for (auto jt = std::next(it); jt != one_finding.end(); ++jt) {
      double max_diff = 0;
      for (std::size_t k = 0; k < it->second->image.grid.size(); ++k)
        max_diff = std::max(max_diff,
                            std::abs(it->second->image.grid[k] - jt->second->image.grid[k]));
      CHECK(max_diff > 0.3);  // a glyph pixel, not just noise
      ++checked;
    }
  CHECK(checked > 0);
}
