#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "mrg/checkpoint.hpp"
#include "mrg/config.hpp"
#include "mrg/trainer.hpp"

using mrg::KnowledgeSource;
using mrg::PreparedSample;

namespace {

struct Fixture {
  mrg::KnowledgeGraph graph = mrg::build_node_vocabulary();
  mrg::Vocabulary vocab = mrg::build_report_vocabulary(graph);
  std::vector<mrg::Sample> samples;
  mrg::ModelConfig mcfg;

  explicit Fixture(int n = 24, std::uint64_t seed = 5) {
    samples = mrg::generate_corpus(n, seed, 1.2, graph);
    mcfg.width = 16;
    mcfg.layers = 1;
    mcfg.heads = 4;
    mcfg.proj_dim = 8;
    mcfg.patch = 8;
    mcfg.image_side = 32;
    mcfg.max_len = 64;
    mcfg.vocab_size = vocab.size();
  }

  std::vector<PreparedSample<double>> prepare(const std::vector<int>& ids,
                                              const KnowledgeSource& src,
                                              std::uint64_t corr_seed = 11) const {
    return mrg::prepare_samples<double>(samples, ids, graph, vocab, mcfg, src, nullptr,
                                        corr_seed);
  }
};

std::vector<int> iota_ids(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST_CASE("one optimization step decreases the total loss on the same batch") {
  const Fixture fx;
  const auto prepared = fx.prepare(iota_ids(4), KnowledgeSource{});
  std::vector<const PreparedSample<double>*> batch;
  for (const auto& p : prepared) batch.push_back(&p);

  int decreased = 0;
  for (int seed = 0; seed < 10; ++seed) {
    mrg::TrainParams tcfg;
    tcfg.lr = 3e-4;
    tcfg.seed = 100 + seed;
    mrg::GeneratorTrainer<double> trainer(fx.mcfg, tcfg, 200 + seed);
    mrg::Rng r1(seed), r2(seed), r3(seed);
    const double before = trainer.evaluate_losses(batch, r1).total;

    // descent is judged against the objective that was optimized: the step
    // also advances the momentum targets and the negative queue, so both are
    // restored before re-evaluating
    std::vector<mrg::MatrixOf<double>> momentum_before;
    for (const auto& [name, p] : trainer.momentum_model.named_params().items)
      momentum_before.push_back(p.value());
    const auto queue_img = trainer.queue.image_queue;
    const auto queue_txt = trainer.queue.text_queue;

    trainer.train_step(batch, r2);

    auto momentum_params = trainer.momentum_model.named_params();
    for (std::size_t i = 0; i < momentum_params.items.size(); ++i)
      momentum_params.items[i].second.value() = momentum_before[i];
    trainer.queue.image_queue = queue_img;
    trainer.queue.text_queue = queue_txt;

    const double after = trainer.evaluate_losses(batch, r3).total;
    if (after < before) ++decreased;
  }
  CHECK(decreased >= 9);
}

TEST_CASE("ground_truth and corrupted(1.0) produce identical training streams") {
  const Fixture fx;
  const auto gt = fx.prepare(iota_ids(8), KnowledgeSource{});
  const auto c100 = fx.prepare(iota_ids(8), KnowledgeSource::parse("corrupted:1.0"));
  REQUIRE(gt.size() == c100.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    CHECK(gt[i].knowledge == c100[i].knowledge);
    CHECK(gt[i].knowledge_labels == c100[i].knowledge_labels);
  }

  mrg::TrainParams tcfg;
  tcfg.seed = 9;
  mrg::GeneratorTrainer<double> a(fx.mcfg, tcfg, 77), b(fx.mcfg, tcfg, 77);
  std::vector<const PreparedSample<double>*> batch_a, batch_b;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    batch_a.push_back(&gt[i]);
    batch_b.push_back(&c100[i]);
  }
  mrg::Rng ra(3), rb(3);
  const auto la = a.train_step(batch_a, ra);
  const auto lb = b.train_step(batch_b, rb);
  CHECK(la.total == lb.total);
  CHECK(la.l_itc == lb.l_itc);
  CHECK(la.l_itm == lb.l_itm);
  CHECK(la.l_lm == lb.l_lm);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const Fixture fx;
  const auto prepared = fx.prepare(iota_ids(8), KnowledgeSource{});
  std::vector<const PreparedSample<double>*> batch;
  for (const auto& p : prepared) batch.push_back(&p);

  auto run = [&] {
    mrg::TrainParams tcfg;
    tcfg.seed = 4;
    mrg::GeneratorTrainer<double> t(fx.mcfg, tcfg, 55);
    std::vector<double> losses;
    for (int s = 0; s < 3; ++s) {
      mrg::Rng r(1000 + s);
      losses.push_back(t.train_step(batch, r).total);
    }
    return losses;
  };
  const auto first = run(), second = run();
  for (int s = 0; s < 3; ++s) CHECK(first[s] == second[s]);
}

TEST_CASE("knowledge source none yields the sentinel for every sample") {
  const Fixture fx;
  const auto prepared = fx.prepare(iota_ids(6), KnowledgeSource::parse("none"));
  for (const auto& p : prepared) {
    CHECK(p.knowledge == std::vector<int>{mrg::Vocabulary::kMaskNeg});
    CHECK(mrg::count_set(p.knowledge_labels) == 0);
  }
}

TEST_CASE("corrupted knowledge is fixed per sample across calls") {
  const Fixture fx;
  const auto a = fx.prepare(iota_ids(8), KnowledgeSource::parse("corrupted:0.7"), 21);
  const auto b = fx.prepare(iota_ids(8), KnowledgeSource::parse("corrupted:0.7"), 21);
  const auto c = fx.prepare(iota_ids(8), KnowledgeSource::parse("corrupted:0.7"), 22);
  bool any_differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].knowledge_labels == b[i].knowledge_labels);
    if (a[i].knowledge_labels != c[i].knowledge_labels) any_differs = true;
  }
  CHECK(any_differs);  // a different corruption seed draws different flips
}

TEST_CASE("checkpoint round trip preserves generation exactly") {
  const Fixture fx;
  mrg::TrainParams tcfg;
  tcfg.seed = 6;
  mrg::GeneratorTrainer<double> trainer(fx.mcfg, tcfg, 31);
  const auto prepared = fx.prepare(iota_ids(6), KnowledgeSource{});
  std::vector<const PreparedSample<double>*> batch;
  for (const auto& p : prepared) batch.push_back(&p);
  mrg::Rng r(2);
  trainer.train_step(batch, r);  // move away from init

  const std::string path = "ckpt_roundtrip.bin";
  mrg::save_checkpoint(path, trainer.model.named_params());

  auto reloaded = mrg::ReportModel<double>::init(fx.mcfg, 999);
  auto params = reloaded.named_params();
  mrg::load_checkpoint(path, params);

  mrg::EvalParams eval;
  eval.max_len = 24;
  const auto before = mrg::generate_reports(trainer.model, prepared, fx.vocab, eval);
  const auto after = mrg::generate_reports(reloaded, prepared, fx.vocab, eval);
  CHECK(before == after);

  const auto arrays = mrg::load_checkpoint_arrays(path);
  CHECK(arrays.size() == trainer.model.named_params().size());
  for (const auto& [name, p] : trainer.model.named_params().items)
    CHECK((arrays.at(name).array() == p.value().array()).all());
  std::remove(path.c_str());
}

TEST_CASE("references evaluated against themselves score perfectly") {
  const Fixture fx(12);
  std::vector<std::string> refs;
  for (const auto& s : fx.samples) refs.push_back(s.report);
  const auto m = mrg::score_reports(refs, refs);
  CHECK(m.bleu1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.bleu2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.bleu3 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.bleu4 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.rouge_l == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.cider == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("classifier training improves over initialization on easy data") {
  const Fixture fx(60, 17);
  const auto train_set = fx.prepare(iota_ids(48), KnowledgeSource{});
  std::vector<int> val_ids;
  for (int i = 48; i < 60; ++i) val_ids.push_back(i);
  const auto val_set = fx.prepare(val_ids, KnowledgeSource{});

  mrg::TrainParams tcfg;
  tcfg.epochs = 6;
  tcfg.batch = 16;
  tcfg.lr = 3e-3;
  tcfg.seed = 3;
  const auto result = mrg::train_classifier<double>(train_set, val_set, fx.mcfg, tcfg);
  CHECK(result.best_epoch >= 0);
  CHECK(result.best_val.a_acc > 0.6);  // far above an untrained 50% coin
  const auto probs = mrg::classifier_probabilities(result.best, val_set);
  CHECK(probs.rows() == 12);
  CHECK(probs.cols() == 27);
  CHECK(probs.minCoeff() > 0.0);
  CHECK(probs.maxCoeff() < 1.0);
}

TEST_CASE("spearman correlation helper") {
  CHECK(mrg::spearman_correlation({1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4}) ==
        doctest::Approx(1.0));
  CHECK(mrg::spearman_correlation({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(mrg::spearman_correlation({1, 2, 3, 4}, {0.2, 0.1, 0.3, 0.4}) ==
        doctest::Approx(0.8));
  CHECK(mrg::spearman_correlation({1, 2}, {5, 5}) == doctest::Approx(0.0));
}

TEST_CASE("config file parsing, overrides, and errors") {
  const std::string path = "config_test.ini";
  {
    std::ofstream out(path);
    out << "# comment\n[corpus]\nn = 50\nseed = 3\n\n[train]\nlr = 2e-4\nepochs = 4\n";
    out << "[sweep]\naccuracies = 0.6, 0.8\nseeds = 5,6\n";
  }
  auto cfg = mrg::ExperimentConfig::load(path);
  CHECK(cfg.corpus.n == 50);
  CHECK(cfg.train.lr == doctest::Approx(2e-4));
  CHECK(cfg.train.epochs == 4);
  CHECK(cfg.sweep.accuracies == std::vector<double>{0.6, 0.8});
  CHECK(cfg.sweep.seeds == std::vector<std::uint64_t>{5, 6});
  // unspecified keys keep documented defaults
  CHECK(cfg.model.width == 64);
  CHECK(cfg.train.weight_decay == doctest::Approx(5e-5));
  CHECK(cfg.model.momentum == doctest::Approx(0.995));

  cfg.set("model.width", "32");
  CHECK(cfg.model.width == 32);
  CHECK_THROWS_AS(cfg.set("model.nonsense", "1"), mrg::ConfigError);
  CHECK_THROWS_AS(cfg.set("train.lr", "fast"), mrg::ConfigError);

  cfg.set("sweep.accuracies", "1.4");
  CHECK_THROWS_AS(cfg.validate(), mrg::ConfigError);
  std::remove(path.c_str());

  CHECK_THROWS_AS(mrg::ExperimentConfig::load("no_such_config.ini"), mrg::IoError);
  CHECK_THROWS_AS(KnowledgeSource::parse("telepathy"), mrg::ConfigError);
  CHECK_THROWS_AS(KnowledgeSource::parse("corrupted:1.5"), mrg::ConfigError);
}

TEST_CASE("generator smoke run saves a best checkpoint and logs") {
  const Fixture fx(20, 23);
  const auto train_set = fx.prepare(iota_ids(16), KnowledgeSource{});
  std::vector<int> val_ids = {16, 17, 18, 19};
  const auto val_set = fx.prepare(val_ids, KnowledgeSource{});

  mrg::TrainParams tcfg;
  tcfg.epochs = 2;
  tcfg.batch = 8;
  tcfg.lr = 1e-3;
  tcfg.seed = 12;
  mrg::GeneratorTrainer<double> trainer(fx.mcfg, tcfg, 13);
  mrg::EvalParams eval;
  eval.max_len = 32;
  const auto result = mrg::train_generator<double>(trainer, train_set, val_set, fx.vocab, eval,
                                                   "smoke_train.csv", "smoke_val.csv");
  CHECK(result.best_epoch >= 0);
  CHECK(!result.best_params.empty());

  std::ifstream log("smoke_train.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "step,l_itc,l_itm,l_lm,total,tau");
  int rows = 0;
  std::string line;
  while (std::getline(log, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);  // 2 epochs x 2 batches
  std::remove("smoke_train.csv");
  std::remove("smoke_val.csv");
}
