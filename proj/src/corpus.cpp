#include "mrg/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mrg/errors.hpp"
#include "mrg/rng.hpp"

namespace mrg {

namespace {

using TemplateMap = std::map<std::string, std::vector<std::string>>;

const TemplateMap& disease_templates() {
  static const TemplateMap t = {
      {"effusion",
       {"there is a small pleural effusion on the left",
        "a moderate pleural effusion is present"}},
      {"opacity",
       {"patchy opacity is seen in the left lung",
        "the right lung shows focal opacity"}},
      {"atelectasis",
       {"there is atelectasis at the lung base",
        "linear atelectasis is noted in the lower lung"}},
      {"cardiomegaly",
       {"the heart is enlarged consistent with cardiomegaly",
        "cardiomegaly with a globular heart contour"}},
      {"pneumonia",
       {"consolidation in the lung concerning for pneumonia",
        "findings in the lung are compatible with pneumonia"}},
      {"pneumothorax",
       {"a small apical pneumothorax with a visible pleural line",
        "pneumothorax is seen along the pleural margin"}},
      {"emphysema",
       {"the lung is hyperexpanded with emphysema",
        "emphysema with lucent lung fields"}},
      {"edema",
       {"diffuse lung markings suggest interstitial edema",
        "mild edema within the lung interstitium"}},
      {"calcinosis",
       {"calcinosis projecting over the bone",
        "dense calcinosis near the bone cortex"}},
      {"nodule",
       {"a small nodule is seen in the lung apex",
        "a solitary lung nodule is identified"}},
      {"scoliosis",
       {"mild scoliosis of the thoracic spine",
        "the spine shows a scoliosis curvature"}},
      {"thickening",
       {"there is pleural thickening laterally",
        "apical pleural thickening is stable"}},
      {"airspace disease",
       {"patchy airspace disease is present",
        "multifocal airspace disease bilaterally"}},
      {"arthritis",
       {"degenerative arthritis of the spine",
        "the spine shows facet arthritis"}},
      {"hernia",
       {"a hiatal hernia projects behind the mediastinum",
        "hernia adjacent to the mediastinum is noted"}},
      {"bone fractures",
       {"old healed bone fractures are visible",
        "bone fractures of the posterior ribs are noted"}},
      {"hypoinflation",
       {"there is hypoinflation with low lung volumes",
        "hypoinflation of both lung fields"}},
      {"lesion",
       {"a lesion is identified in the lung",
        "a focal lung lesion requires attention"}},
      {"foreign object",
       {"a foreign object projects over the lung",
        "a retained foreign object is within the lung field"}},
  };
  return t;
}

constexpr int kTileSize = 9;
constexpr int kGlyphSize = 4;

// Organ tile top-left corners in canonical organ order.
constexpr int kTilePos[7][2] = {{1, 1},  {1, 11},  {1, 21}, {11, 1},
                                {11, 11}, {11, 21}, {21, 11}};

// 4x4 glyph bitmaps, one distinct pattern per disease rank.
const char* const kGlyphs[19][4] = {
    {"XXXX", "X..X", "X..X", "XXXX"},  // effusion: box
    {"X..X", ".XX.", ".XX.", "X..X"},  // opacity: X
    {"XXXX", "XXXX", "....", "...."},  // atelectasis: top bar
    {".XX.", "XXXX", "XXXX", ".XX."},  // cardiomegaly: blob
    {"X.X.", ".X.X", "X.X.", ".X.X"},  // pneumonia: checker
    {"X...", "XX..", "XXX.", "XXXX"},  // pneumothorax: wedge
    {"XXXX", "....", "XXXX", "...."},  // emphysema: bars
    {".X.X", ".X.X", ".X.X", ".X.X"},  // edema: stripes
    {"XXXX", "...X", "...X", "...X"},  // calcinosis: corner
    {"....", ".XX.", ".XX.", "...."},  // nodule: dot
    {"...X", "..X.", ".X..", "X..."},  // scoliosis: diagonal
    {"X..X", "X..X", "X..X", "XXXX"},  // thickening: U
    {"XXXX", "X...", "XXX.", "X..."},  // airspace disease: F
    {"X.X.", "X.X.", "X.X.", "X.X."},  // arthritis: columns
    {"XXXX", ".X..", ".X..", ".X.."},  // hernia: T
    {"X...", "X...", "X...", "XXXX"},  // bone fractures: L
    {"..X.", ".XX.", "XXX.", "..X."},  // hypoinflation: arrow
    {".X..", "XXX.", ".X..", ".X.."},  // lesion: plus
    {"XX..", "XX..", "..XX", "..XX"},  // foreign object: quads
};

std::uint64_t labelset_hash(const std::vector<int>& disease_ranks) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (int r : disease_ranks) h = hash_seed(h, static_cast<std::uint64_t>(r) + 17);
  return h;
}

SyntheticImage render_image(const std::vector<int>& disease_ranks, const KnowledgeGraph& graph,
                            Rng& rng) {
  SyntheticImage img;
  img.grid.assign(static_cast<std::size_t>(img.height) * img.width, 0.08);

  const auto organs = graph.organs();
  auto organ_index = [&](const std::string& organ) {
    for (std::size_t i = 0; i < organs.size(); ++i)
      if (organs[i] == organ) return static_cast<int>(i);
    return -1;
  };

  // faint anatomy: one tinted tile per organ
  for (int o = 0; o < 7; ++o)
    for (int r = 0; r < kTileSize; ++r)
      for (int c = 0; c < kTileSize; ++c)
        img.grid[static_cast<std::size_t>(kTilePos[o][0] + r) * img.width + kTilePos[o][1] + c] +=
            0.10 + 0.015 * o;

  // glyphs: first finding of an organ at the tile's top slot, second at the
  // bottom slot so two same-organ findings never overlap
  const auto diseases = graph.diseases();
  std::map<int, int> organ_slot;
  for (int rank : disease_ranks) {
    const std::string& name = diseases[rank];
    const int organ = organ_index(graph.organ_of.at(name));
    const int slot = organ_slot[organ]++;
    const int jr = static_cast<int>(rng.uniform_int(2));
    const int jc = static_cast<int>(rng.uniform_int(2));
    const int base_r = kTilePos[organ][0] + (slot == 0 ? 0 + jr : 5);
    const int base_c = kTilePos[organ][1] + (slot == 0 ? 0 + jc : 5);
    for (int r = 0; r < kGlyphSize; ++r)
      for (int c = 0; c < kGlyphSize; ++c)
        if (kGlyphs[rank][r][c] == 'X') {
          auto& px = img.grid[static_cast<std::size_t>(base_r + r) * img.width + base_c + c];
          px = std::max(px, 0.9);
        }
    img.planted_findings.push_back(name);
  }

  for (auto& px : img.grid) {
    px += 0.03 * rng.normal();
    px = std::min(1.0, std::max(0.0, px));
    px = std::round(px * 10000.0) / 10000.0;  // quantize for exact JSON round trips
  }
  return img;
}

std::vector<int> draw_findings(Rng& rng, double imbalance_exponent) {
  const double u = rng.uniform();
  const int k = u < 0.35 ? 0 : (u < 0.80 ? 1 : 2);
  std::vector<double> weights(KnowledgeGraph::kDiseaseCount);
  for (int i = 0; i < KnowledgeGraph::kDiseaseCount; ++i)
    weights[i] = std::pow(double(i + 1), -imbalance_exponent);
  std::vector<int> drawn;
  for (int j = 0; j < k; ++j) {
    double total = 0;
    for (int i = 0; i < KnowledgeGraph::kDiseaseCount; ++i) total += weights[i];
    double u2 = rng.uniform() * total;
    int pick = -1;
    for (int i = 0; i < KnowledgeGraph::kDiseaseCount; ++i) {
      if (weights[i] > 0.0 && u2 < weights[i]) {
        pick = i;
        break;
      }
      u2 -= weights[i];
    }
    if (pick < 0)  // u2 == total after rounding; take the last live rank
      for (int i = KnowledgeGraph::kDiseaseCount - 1; i >= 0; --i)
        if (weights[i] > 0.0) {
          pick = i;
          break;
        }
    drawn.push_back(pick);
    weights[pick] = 0.0;
  }
  std::sort(drawn.begin(), drawn.end());
  return drawn;
}

std::string compose_report(const std::vector<int>& disease_ranks, const KnowledgeGraph& graph) {
  const auto diseases = graph.diseases();
  const std::uint64_t h = labelset_hash(disease_ranks);
  std::vector<std::string> sentences;
  if (disease_ranks.empty()) {
    const auto& normals = normal_report_templates();
    sentences.push_back(normals[h % normals.size()]);
  } else {
    for (int rank : disease_ranks) {
      const auto& variants = disease_templates().at(diseases[rank]);
      sentences.push_back(variants[hash_seed(h, rank) % variants.size()]);
    }
    if (hash_seed(h, 999) % 2 == 0) {
      const auto& closers = closing_templates();
      sentences.push_back(closers[hash_seed(h, 1000) % closers.size()]);
    }
  }
  std::string report;
  for (const auto& s : sentences) {
    if (!report.empty()) report += " . ";
    report += s;
  }
  report += " .";
  return Vocabulary::normalize(report);
}

}  // namespace

const std::vector<std::string>& report_templates(const std::string& disease) {
  const auto it = disease_templates().find(disease);
  if (it == disease_templates().end())
    throw ContractError("no report template for disease '" + disease + "'");
  return it->second;
}

const std::vector<std::string>& normal_report_templates() {
  static const std::vector<std::string> t = {
      "the heart and lung are normal in size and appearance",
      "no acute abnormality . the chest appears normal",
      "normal examination without acute findings",
  };
  return t;
}

const std::vector<std::string>& closing_templates() {
  static const std::vector<std::string> t = {
      "the remaining structures are normal",
      "otherwise the examination is normal",
  };
  return t;
}

Vocabulary build_report_vocabulary(const KnowledgeGraph& graph) {
  Vocabulary v;
  v.add_words(graph.nodes);
  v.add_words({"."});
  for (const auto& [disease, variants] : disease_templates()) v.add_words(variants);
  v.add_words(normal_report_templates());
  v.add_words(closing_templates());
  return v;
}

std::vector<Sample> generate_corpus(int n, std::uint64_t seed, double imbalance_exponent,
                                    const KnowledgeGraph& graph) {
  if (n < 1) throw ContractError("generate_corpus: n must be >= 1");
  std::vector<Sample> samples;
  samples.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(hash_seed(seed, static_cast<std::uint64_t>(i)));
    const std::vector<int> ranks = draw_findings(rng, imbalance_exponent);
    Sample s;
    s.report = compose_report(ranks, graph);
    s.image = render_image(ranks, graph, rng);
    s.node_labels = extract_nodes(s.report, graph);
    samples.push_back(std::move(s));
  }
  return samples;
}

NodeLabelVector extract_nodes(const std::vector<std::string>& report_words,
                              const KnowledgeGraph& graph) {
  NodeLabelVector labels(graph.nodes.size(), 0);
  for (std::size_t ni = 0; ni < graph.nodes.size(); ++ni) {
    const auto name_words = Vocabulary::split_words(graph.nodes[ni]);
    if (name_words.empty() || name_words.size() > report_words.size()) continue;
    for (std::size_t at = 0; at + name_words.size() <= report_words.size(); ++at) {
      bool match = true;
      for (std::size_t j = 0; j < name_words.size(); ++j)
        if (report_words[at + j] != name_words[j]) {
          match = false;
          break;
        }
      if (match) {
        labels[ni] = 1;
        break;
      }
    }
  }
  return labels;
}

NodeLabelVector extract_nodes(const std::string& report, const KnowledgeGraph& graph) {
  return extract_nodes(Vocabulary::split_words(report), graph);
}

NodeLabelVector corrupt_labels(const NodeLabelVector& labels, double target_accuracy,
                               std::uint64_t seed) {
  if (!(target_accuracy > 0.0) || target_accuracy > 1.0)
    throw ContractError("corrupt_labels: target_accuracy must be in (0, 1], got " +
                        std::to_string(target_accuracy));
  Rng rng(seed);
  NodeLabelVector out = labels;
  const double flip_p = 1.0 - target_accuracy;
  for (auto& bit : out)
    if (rng.bernoulli(flip_p)) bit = bit ? 0 : 1;
  return out;
}

SplitIndices split_corpus(int n_samples, double train_ratio, double val_ratio, double test_ratio,
                          std::uint64_t seed) {
  const double total = train_ratio + val_ratio + test_ratio;
  if (std::abs(total - 1.0) > 1e-9 || train_ratio < 0 || val_ratio < 0 || test_ratio < 0)
    throw ContractError("split_corpus: ratios must be nonnegative and sum to 1");
  std::vector<int> order(n_samples);
  for (int i = 0; i < n_samples; ++i) order[i] = i;
  Rng rng(hash_seed(seed, 0x51u));
  rng.shuffle(order);
  const int n_train = static_cast<int>(std::llround(n_samples * train_ratio));
  const int n_val = static_cast<int>(std::llround(n_samples * val_ratio));
  if (n_train + n_val > n_samples)
    throw ContractError("split_corpus: rounding produced oversized train+val");
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  s.test.assign(order.begin() + n_train + n_val, order.end());
  return s;
}

void save_corpus_jsonl(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file: " + path);
  const KnowledgeGraph graph = build_node_vocabulary();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    nlohmann::json j;
    j["id"] = i;
    j["image"]["shape"] = {s.image.height, s.image.width, s.image.channels};
    j["image"]["grid"] = s.image.grid;
    j["report"] = s.report;
    j["nodes"] = labels_to_names(s.node_labels, graph);
    j["planted"] = s.image.planted_findings;
    out << j.dump() << "\n";
  }
}

std::vector<Sample> load_corpus_jsonl(const std::string& path, const KnowledgeGraph& graph) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::vector<Sample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Sample s;
    const auto shape = j.at("image").at("shape");
    s.image.height = shape.at(0).get<int>();
    s.image.width = shape.at(1).get<int>();
    s.image.channels = shape.at(2).get<int>();
    s.image.grid = j.at("image").at("grid").get<std::vector<double>>();
    if (s.image.grid.size() !=
        static_cast<std::size_t>(s.image.height) * s.image.width * s.image.channels)
      throw IoError("corpus image grid does not match its shape in " + path);
    if (j.contains("planted"))
      s.image.planted_findings = j.at("planted").get<std::vector<std::string>>();
    s.report = j.at("report").get<std::string>();
    s.node_labels = names_to_labels(j.at("nodes").get<std::vector<std::string>>(), graph);
    samples.push_back(std::move(s));
  }
  return samples;
}

void save_split_manifest(const std::string& path, const SplitIndices& split) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write split manifest: " + path);
  auto emit = [&](const char* name, const std::vector<int>& ids) {
    out << name;
    for (int i : ids) out << " " << i;
    out << "\n";
  };
  emit("train", split.train);
  emit("val", split.val);
  emit("test", split.test);
}

SplitIndices load_split_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split manifest: " + path);
  SplitIndices s;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string name;
    row >> name;
    std::vector<int>* dst = name == "train" ? &s.train
                           : name == "val"  ? &s.val
                           : name == "test" ? &s.test
                                            : nullptr;
    if (!dst) throw IoError("unknown split name '" + name + "' in " + path);
    int id;
    while (row >> id) dst->push_back(id);
  }
  return s;
}

}  // namespace mrg
