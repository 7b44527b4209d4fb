// Command-line driver: corpus generation, classifier/generator training, the
// node-accuracy sweep, evaluation and report emission.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mrg/checkpoint.hpp"
#include "mrg/config.hpp"
#include "mrg/corpus.hpp"
#include "mrg/plot.hpp"
#include "mrg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

// exit code 3: an acceptance property failed under --check
struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CliArgs {
  std::string config_path;
  std::vector<std::string> defines;
};

mrg::ExperimentConfig resolve_config(const CliArgs& args) {
  mrg::ExperimentConfig cfg = args.config_path.empty()
                                  ? mrg::ExperimentConfig::defaults()
                                  : mrg::ExperimentConfig::load(args.config_path);
  for (const auto& d : args.defines) {
    const auto eq = d.find('=');
    if (eq == std::string::npos)
      throw mrg::ConfigError("override must look like section.key=value: " + d);
    cfg.set(d.substr(0, eq), d.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

fs::path output_dir(const mrg::ExperimentConfig& cfg) {
  fs::path dir = cfg.output_dir;
  if (dir.is_relative()) {
    if (const char* root = std::getenv("MRG_OUTPUT_ROOT")) dir = fs::path(root) / dir;
  }
  fs::create_directories(dir);
  return dir;
}

struct CorpusBundle {
  mrg::KnowledgeGraph graph;
  mrg::Vocabulary vocab;
  std::vector<mrg::Sample> samples;
  mrg::SplitIndices split;
};

CorpusBundle load_corpus_bundle(const fs::path& dir) {
  CorpusBundle b;
  const fs::path graph_path = dir / "knowledge_graph.txt";
  const fs::path corpus_path = dir / "corpus.jsonl";
  const fs::path split_path = dir / "splits.txt";
  for (const auto& p : {graph_path, corpus_path, split_path})
    if (!fs::exists(p)) throw mrg::IoError("missing corpus file " + p.string() +
                                           " (run gen-corpus first)");
  b.graph = mrg::KnowledgeGraph::load(graph_path.string());
  b.vocab = mrg::build_report_vocabulary(b.graph);
  b.samples = mrg::load_corpus_jsonl(corpus_path.string(), b.graph);
  b.split = mrg::load_split_manifest(split_path.string());
  return b;
}

const std::vector<int>& split_ids(const CorpusBundle& b, const std::string& name) {
  if (name == "train") return b.split.train;
  if (name == "val") return b.split.val;
  if (name == "test") return b.split.test;
  throw mrg::ConfigError("unknown split '" + name + "'");
}

template <typename Fn>
auto with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "float") return fn(float{});
  return fn(double{});
}

mrg::CiderVariant cider_variant_of(const mrg::ExperimentConfig& cfg) {
  return cfg.eval.cider_variant == "plain" ? mrg::CiderVariant::kPlain : mrg::CiderVariant::kD;
}

std::map<int, std::string> read_report_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mrg::IoError("cannot open report file: " + path);
  std::map<int, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    out[j.at("id").get<int>()] = j.at("report").get<std::string>();
  }
  if (out.empty()) throw mrg::IoError("no reports in " + path);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_corpus(const mrg::ExperimentConfig& cfg, bool check) {
  const fs::path dir = output_dir(cfg);
  const mrg::KnowledgeGraph graph = mrg::build_node_vocabulary();
  const auto samples = mrg::generate_corpus(cfg.corpus.n, cfg.corpus.seed,
                                            cfg.corpus.imbalance_exponent, graph);
  const auto split = mrg::split_corpus(cfg.corpus.n, cfg.corpus.train_ratio,
                                       cfg.corpus.val_ratio, cfg.corpus.test_ratio,
                                       cfg.corpus.seed);
  graph.save((dir / "knowledge_graph.txt").string());
  mrg::save_corpus_jsonl((dir / "corpus.jsonl").string(), samples);
  mrg::save_split_manifest((dir / "splits.txt").string(), split);
  std::cout << "wrote " << samples.size() << " samples to " << (dir / "corpus.jsonl") << "\n";

  if (check) {
    std::vector<long> counts(graph.nodes.size(), 0);
    long total = 0;
    for (const auto& s : samples)
      for (std::size_t i = 0; i < s.node_labels.size(); ++i)
        if (s.node_labels[i]) {
          ++counts[i];
          ++total;
        }
    std::vector<long> sorted = counts;
    std::sort(sorted.rbegin(), sorted.rend());
    const double head4 = double(sorted[0] + sorted[1] + sorted[2] + sorted[3]);
    std::cout << "head-4 label share: " << head4 / double(total) << "\n";
    if (cfg.corpus.imbalance_exponent >= 1.5 && head4 / double(total) <= 0.5)
      throw CheckFailure("long-tail property failed: head-4 share <= 0.5");
  }
  return 0;
}

int cmd_train_classifier(const mrg::ExperimentConfig& cfg) {
  const fs::path dir = output_dir(cfg);
  const CorpusBundle bundle = load_corpus_bundle(dir);
  return with_precision(cfg.train.precision, [&](auto tag) {
    using S = decltype(tag);
    const mrg::KnowledgeSource gt = mrg::KnowledgeSource::parse("ground_truth");
    const auto train_set = mrg::prepare_samples<S>(bundle.samples, bundle.split.train,
                                                   bundle.graph, bundle.vocab, cfg.model, gt,
                                                   nullptr, 0);
    const auto val_set = mrg::prepare_samples<S>(bundle.samples, bundle.split.val, bundle.graph,
                                                 bundle.vocab, cfg.model, gt, nullptr, 0);
    const auto test_set = mrg::prepare_samples<S>(bundle.samples, bundle.split.test, bundle.graph,
                                                  bundle.vocab, cfg.model, gt, nullptr, 0);
    auto result = mrg::train_classifier<S>(train_set, val_set, cfg.model, cfg.train,
                                           (dir / "classifier_train_log.csv").string());
    mrg::save_checkpoint((dir / "classifier.ckpt").string(), result.best.named_params());

    const auto probs = mrg::classifier_probabilities(result.best, test_set);
    const auto metrics = mrg::compute_multilabel_metrics(probs, mrg::label_matrix(test_set));
    std::ofstream metrics_csv(dir / "classifier_metrics.csv");
    metrics_csv << "split,aauc,af1,aacc,map,excluded_labels\n";
    metrics_csv << "test," << mrg::format_value(metrics.a_auc) << ","
                << mrg::format_value(metrics.a_f1) << "," << mrg::format_value(metrics.a_acc)
                << "," << mrg::format_value(metrics.m_ap) << "," << metrics.excluded_labels
                << "\n";
    std::ofstream pred(dir / "classifier_predictions.jsonl");
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      nlohmann::json j;
      j["id"] = test_set[i].corpus_id;
      std::vector<double> row(probs.cols());
      for (Eigen::Index c = 0; c < probs.cols(); ++c) row[c] = probs(Eigen::Index(i), c);
      j["probabilities"] = row;
      pred << j.dump() << "\n";
    }
    std::cout << "test aAUC=" << metrics.a_auc << " aF1=" << metrics.a_f1
              << " aACC=" << metrics.a_acc << " mAP=" << metrics.m_ap << "\n";
    return 0;
  });
}

template <typename S>
mrg::NodeClassifier<S> load_classifier(const std::string& path, const mrg::ExperimentConfig& cfg) {
  auto cls = mrg::NodeClassifier<S>::init(cfg.model.image_side, 0);
  auto params = cls.named_params();
  mrg::load_checkpoint(path, params);
  return cls;
}

int cmd_train_generator(const mrg::ExperimentConfig& cfg, const std::string& source_spec) {
  const fs::path dir = output_dir(cfg);
  const CorpusBundle bundle = load_corpus_bundle(dir);
  const mrg::KnowledgeSource source = mrg::KnowledgeSource::parse(source_spec);
  return with_precision(cfg.train.precision, [&](auto tag) {
    using S = decltype(tag);
    std::unique_ptr<mrg::NodeClassifier<S>> classifier;
    if (source.kind == mrg::KnowledgeSource::Kind::kClassifier)
      classifier = std::make_unique<mrg::NodeClassifier<S>>(
          load_classifier<S>(source.classifier_checkpoint, cfg));

    mrg::ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = bundle.vocab.size();
    const std::uint64_t corruption_seed = mrg::hash_seed(cfg.train.seed, 0xACC);
    const auto train_set =
        mrg::prepare_samples<S>(bundle.samples, bundle.split.train, bundle.graph, bundle.vocab,
                                mcfg, source, classifier.get(), corruption_seed);
    const auto val_set =
        mrg::prepare_samples<S>(bundle.samples, bundle.split.val, bundle.graph, bundle.vocab,
                                mcfg, source, classifier.get(), corruption_seed);

    mrg::GeneratorTrainer<S> trainer(mcfg, cfg.train, mrg::hash_seed(cfg.train.seed, 0x0DE1));
    const auto result = mrg::train_generator<S>(trainer, train_set, val_set, bundle.vocab,
                                                cfg.eval, (dir / "train_log.csv").string(),
                                                (dir / "val_log.csv").string());
    mrg::load_params_from_snapshot(trainer.model, result.best_params);
    mrg::save_checkpoint((dir / "generator.ckpt").string(), trainer.model.named_params());
    std::cout << "best val BLEU-4 " << result.best_val_bleu4 << " at epoch "
              << result.best_epoch << "; final train LM loss " << result.final_train_lm << "\n";
    return 0;
  });
}

mrg::MetricReport evaluate_checkpoint(const mrg::ExperimentConfig& cfg,
                                      const CorpusBundle& bundle, const std::string& ckpt,
                                      const mrg::KnowledgeSource& source,
                                      const std::string& split_name,
                                      std::uint64_t corruption_seed, const fs::path& pred_path) {
  return with_precision(cfg.train.precision, [&](auto tag) {
    using S = decltype(tag);
    std::unique_ptr<mrg::NodeClassifier<S>> classifier;
    if (source.kind == mrg::KnowledgeSource::Kind::kClassifier)
      classifier = std::make_unique<mrg::NodeClassifier<S>>(
          load_classifier<S>(source.classifier_checkpoint, cfg));

    mrg::ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = bundle.vocab.size();
    auto model = mrg::ReportModel<S>::init(mcfg, 0);
    auto params = model.named_params();
    mrg::load_checkpoint(ckpt, params);

    const auto& ids = split_ids(bundle, split_name);
    if (ids.empty()) throw mrg::ContractError("split '" + split_name + "' is empty");
    const auto eval_set = mrg::prepare_samples<S>(bundle.samples, ids, bundle.graph, bundle.vocab,
                                                  mcfg, source, classifier.get(),
                                                  corruption_seed);
    const auto predictions = mrg::generate_reports(model, eval_set, bundle.vocab, cfg.eval);
    std::vector<std::string> references;
    for (const auto& s : eval_set) references.push_back(s.report);

    if (!pred_path.empty()) {
      std::ofstream out(pred_path);
      if (!out) throw mrg::IoError("cannot write predictions: " + pred_path.string());
      std::ofstream ref_out(pred_path.parent_path() / "references.jsonl");
      for (std::size_t i = 0; i < predictions.size(); ++i) {
        nlohmann::json j;
        j["id"] = eval_set[i].corpus_id;
        j["report"] = predictions[i];
        j["knowledge"] = mrg::knowledge_text_string(eval_set[i].knowledge_labels, bundle.graph,
                                                    bundle.vocab);
        out << j.dump() << "\n";
        nlohmann::json r;
        r["id"] = eval_set[i].corpus_id;
        r["report"] = references[i];
        ref_out << r.dump() << "\n";
      }
    }
    return mrg::score_reports(predictions, references, cider_variant_of(cfg));
  });
}

// Batch evaluation over two JSONL files keyed by id: per-sample CSV rows plus
// one corpus-level summary row.
int cmd_score(const mrg::ExperimentConfig& cfg, const std::string& predictions_path,
              const std::string& references_path) {
  const fs::path dir = output_dir(cfg);
  const auto predictions = read_report_jsonl(predictions_path);
  const auto references = read_report_jsonl(references_path);
  std::vector<int> ids;
  std::vector<std::string> preds, refs;
  for (const auto& [id, report] : predictions) {
    const auto it = references.find(id);
    if (it == references.end())
      throw mrg::ContractError("prediction id " + std::to_string(id) + " has no reference");
    ids.push_back(id);
    preds.push_back(report);
    refs.push_back(it->second);
  }

  std::vector<mrg::Tokens> cands;
  std::vector<std::vector<mrg::Tokens>> ref_sets;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cands.push_back(mrg::Vocabulary::split_words(preds[i]));
    ref_sets.push_back({mrg::Vocabulary::split_words(refs[i])});
  }
  const auto per_sample_cider =
      preds.size() >= 2 ? mrg::cider(cands, ref_sets, cider_variant_of(cfg))
                        : mrg::CiderResult{std::vector<double>(preds.size(), 0.0), 0.0};

  std::ofstream per_sample(dir / "score_per_sample.csv");
  per_sample << "id,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,cider\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto b = mrg::bleu(cands[i], ref_sets[i]);
    per_sample << ids[i];
    for (int k = 0; k < 4; ++k) per_sample << "," << mrg::format_value(b.bleu[k]);
    per_sample << "," << mrg::format_value(mrg::rouge_l(cands[i], ref_sets[i][0])) << ","
               << mrg::format_value(mrg::meteor_lite(cands[i], ref_sets[i][0])) << ","
               << mrg::format_value(per_sample_cider.per_sample[i]) << "\n";
  }
  const auto summary = mrg::score_reports(preds, refs, cider_variant_of(cfg));
  std::ofstream summary_csv(dir / "score_summary.csv");
  summary_csv << mrg::MetricReport::csv_header() << "\n" << summary.csv_row() << "\n";
  std::cout << mrg::MetricReport::csv_header() << "\n" << summary.csv_row() << "\n";
  return 0;
}

int cmd_evaluate(const mrg::ExperimentConfig& cfg, const std::string& ckpt,
                 const std::string& source_spec, const std::string& split_name) {
  const fs::path dir = output_dir(cfg);
  const CorpusBundle bundle = load_corpus_bundle(dir);
  const auto source = mrg::KnowledgeSource::parse(source_spec);
  const auto metrics = evaluate_checkpoint(cfg, bundle, ckpt, source, split_name,
                                           mrg::hash_seed(cfg.train.seed, 0xACC),
                                           dir / "predictions.jsonl");
  std::ofstream csv(dir / "metrics.csv");
  csv << "split,source," << mrg::MetricReport::csv_header() << "\n";
  csv << split_name << "," << source.describe() << "," << metrics.csv_row() << "\n";
  std::cout << mrg::MetricReport::csv_header() << "\n" << metrics.csv_row() << "\n";
  return 0;
}

void emit_sweep_outputs(const fs::path& dir, const std::vector<mrg::SweepRow>& rows) {
  std::ofstream csv(dir / "sweep.csv");
  csv << "seed,accuracy," << mrg::MetricReport::csv_header() << "\n";
  for (const auto& r : rows)
    csv << r.seed << "," << mrg::format_value(r.accuracy) << "," << r.metrics.csv_row() << "\n";

  // mean over seeds per accuracy, one plot per metric
  std::map<double, std::vector<mrg::MetricReport>> by_acc;
  for (const auto& r : rows) by_acc[r.accuracy].push_back(r.metrics);
  std::vector<double> xs;
  std::map<std::string, std::vector<double>> means;
  const std::vector<std::pair<std::string, double mrg::MetricReport::*>> fields = {
      {"bleu1", &mrg::MetricReport::bleu1},   {"bleu2", &mrg::MetricReport::bleu2},
      {"bleu3", &mrg::MetricReport::bleu3},   {"bleu4", &mrg::MetricReport::bleu4},
      {"rouge_l", &mrg::MetricReport::rouge_l}, {"meteor", &mrg::MetricReport::meteor},
      {"cider", &mrg::MetricReport::cider},
  };
  for (const auto& [acc, reports] : by_acc) {
    xs.push_back(acc);
    for (const auto& [name, field] : fields) {
      double sum = 0;
      for (const auto& m : reports) sum += m.*field;
      means[name].push_back(sum / double(reports.size()));
    }
  }
  std::ofstream table(dir / "sweep_summary.csv");
  table << "accuracy";
  for (const auto& [name, field] : fields) table << "," << name;
  table << "\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    table << mrg::format_value(xs[i]);
    for (const auto& [name, field] : fields) table << "," << mrg::format_value(means[name][i]);
    table << "\n";
  }
  for (const auto& [name, field] : fields)
    mrg::write_line_chart((dir / ("sweep_" + name + ".png")).string(), xs,
                          {{name, means[name]}}, "node accuracy");
}

int cmd_sweep(const mrg::ExperimentConfig& cfg, bool check) {
  const fs::path dir = output_dir(cfg);
  const CorpusBundle bundle = load_corpus_bundle(dir);
  const fs::path sweep_dir = dir / "sweep";
  fs::create_directories(sweep_dir);

  std::set<double> accuracies(cfg.sweep.accuracies.begin(), cfg.sweep.accuracies.end());
  accuracies.insert(1.0);  // the ground-truth reference condition

  std::vector<mrg::SweepRow> rows;
  return with_precision(cfg.train.precision, [&](auto tag) {
    using S = decltype(tag);
    mrg::ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = bundle.vocab.size();

    for (const std::uint64_t sweep_seed : cfg.sweep.seeds) {
      int cond = 0;
      for (const double acc : accuracies) {
        mrg::KnowledgeSource source;
        source.kind = mrg::KnowledgeSource::Kind::kCorrupted;
        source.accuracy = acc;
        const std::uint64_t corruption_seed = mrg::hash_seed(sweep_seed, 0xF00 + cond);
        mrg::TrainParams tcfg = cfg.train;
        tcfg.seed = mrg::hash_seed(sweep_seed, 0xE00 + cond);

        const auto train_set =
            mrg::prepare_samples<S>(bundle.samples, bundle.split.train, bundle.graph,
                                    bundle.vocab, mcfg, source, nullptr, corruption_seed);
        const auto val_set =
            mrg::prepare_samples<S>(bundle.samples, bundle.split.val, bundle.graph, bundle.vocab,
                                    mcfg, source, nullptr, corruption_seed);

        mrg::GeneratorTrainer<S> trainer(mcfg, tcfg, mrg::hash_seed(sweep_seed, 0xD00 + cond));
        char stem[64];
        std::snprintf(stem, sizeof(stem), "gen_seed%llu_acc%03d",
                      static_cast<unsigned long long>(sweep_seed), int(std::lround(acc * 100)));
        const auto result = mrg::train_generator<S>(
            trainer, train_set, val_set, bundle.vocab, cfg.eval,
            (sweep_dir / (std::string(stem) + "_train.csv")).string());
        mrg::load_params_from_snapshot(trainer.model, result.best_params);
        const fs::path ckpt = sweep_dir / (std::string(stem) + ".ckpt");
        mrg::save_checkpoint(ckpt.string(), trainer.model.named_params());

        mrg::SweepRow row;
        row.seed = sweep_seed;
        row.accuracy = acc;
        row.metrics = evaluate_checkpoint(cfg, bundle, ckpt.string(), source, "test",
                                          corruption_seed, fs::path{});
        rows.push_back(row);
        std::cout << "seed " << sweep_seed << " accuracy " << acc << ": BLEU-4 "
                  << row.metrics.bleu4 << ", CIDEr " << row.metrics.cider << "\n";
        ++cond;
      }
    }
    emit_sweep_outputs(dir, rows);

    if (check) {
      bool ok = true;
      for (const std::uint64_t s : cfg.sweep.seeds) {
        std::vector<double> xs, bleu4s, ciders;
        for (const auto& r : rows)
          if (r.seed == s) {
            xs.push_back(r.accuracy);
            bleu4s.push_back(r.metrics.bleu4);
            ciders.push_back(r.metrics.cider);
          }
        const double rho_b = mrg::spearman_correlation(xs, bleu4s);
        const double rho_c = mrg::spearman_correlation(xs, ciders);
        std::cout << "seed " << s << ": spearman(bleu4) = " << rho_b
                  << ", spearman(cider) = " << rho_c << "\n";
        if (rho_b <= 0 || rho_c <= 0) ok = false;
      }
      double b_low = 0, b_high = 0, c_low = 0, c_high = 0;
      int n_low = 0, n_high = 0;
      for (const auto& r : rows) {
        if (r.accuracy == 1.0) {
          b_high += r.metrics.bleu4;
          c_high += r.metrics.cider;
          ++n_high;
        }
        if (r.accuracy == *accuracies.begin()) {
          b_low += r.metrics.bleu4;
          c_low += r.metrics.cider;
          ++n_low;
        }
      }
      if (!(b_high / n_high > b_low / n_low)) ok = false;
      if (!(c_high / n_high > c_low / n_low)) ok = false;
      if (!ok) throw CheckFailure("accuracy-vs-quality trend not satisfied");
      std::cout << "trend check passed\n";
    }
    return 0;
  });
}

int cmd_report(const mrg::ExperimentConfig& cfg, const std::string& input) {
  const fs::path dir = output_dir(cfg);
  const fs::path csv_path = input.empty() ? dir / "sweep.csv" : fs::path(input);
  std::ifstream in(csv_path);
  if (!in) throw mrg::IoError("cannot open sweep results: " + csv_path.string());
  std::string header;
  std::getline(in, header);
  std::vector<mrg::SweepRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9) throw mrg::IoError("malformed sweep row: " + line);
    mrg::SweepRow r;
    r.seed = std::stoull(cells[0]);
    r.accuracy = std::stod(cells[1]);
    r.metrics.bleu1 = std::stod(cells[2]);
    r.metrics.bleu2 = std::stod(cells[3]);
    r.metrics.bleu3 = std::stod(cells[4]);
    r.metrics.bleu4 = std::stod(cells[5]);
    r.metrics.rouge_l = std::stod(cells[6]);
    r.metrics.meteor = std::stod(cells[7]);
    r.metrics.cider = std::stod(cells[8]);
    rows.push_back(r);
  }
  if (rows.empty()) throw mrg::IoError("no sweep rows in " + csv_path.string());
  emit_sweep_outputs(dir, rows);
  std::cout << "report written to " << dir << "\n";
  return 0;
}

int cmd_generate(const mrg::ExperimentConfig& cfg, const std::string& ckpt,
                 const std::string& source_spec, const std::string& input_path) {
  const fs::path dir = output_dir(cfg);
  const CorpusBundle bundle = load_corpus_bundle(dir);
  const auto source = mrg::KnowledgeSource::parse(source_spec);
  return with_precision(cfg.train.precision, [&](auto tag) {
    using S = decltype(tag);
    std::unique_ptr<mrg::NodeClassifier<S>> classifier;
    if (source.kind == mrg::KnowledgeSource::Kind::kClassifier)
      classifier = std::make_unique<mrg::NodeClassifier<S>>(
          load_classifier<S>(source.classifier_checkpoint, cfg));
    mrg::ModelConfig mcfg = cfg.model;
    mcfg.vocab_size = bundle.vocab.size();
    auto model = mrg::ReportModel<S>::init(mcfg, 0);
    auto params = model.named_params();
    mrg::load_checkpoint(ckpt, params);

    std::ifstream file_in;
    std::istream* in = &std::cin;
    if (!input_path.empty()) {
      file_in.open(input_path);
      if (!file_in) throw mrg::IoError("cannot open id list: " + input_path);
      in = &file_in;
    }
    std::string line;
    while (std::getline(*in, line)) {
      if (line.empty()) continue;
      const int id = std::stoi(line);
      if (id < 0 || id >= int(bundle.samples.size()))
        throw mrg::ContractError("sample id out of range: " + line);
      const auto prepared =
          mrg::prepare_samples<S>(bundle.samples, {id}, bundle.graph, bundle.vocab, mcfg, source,
                                  classifier.get(), mrg::hash_seed(cfg.train.seed, 0xACC));
      const auto reports = mrg::generate_reports(model, prepared, bundle.vocab, cfg.eval);
      std::cout << reports[0] << "\n";
    }
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-conditioned report generation on a synthetic corpus"};
  app.require_subcommand(1);

  CliArgs args;
  app.add_option("-c,--config", args.config_path, "configuration file");
  app.add_option("-D,--define", args.defines, "override, e.g. -D train.lr=3e-4");

  bool check = false;
  std::string source_spec = "ground_truth";
  std::string ckpt, split_name = "test", report_input, generate_input;

  auto* gen_corpus = app.add_subcommand("gen-corpus", "generate the synthetic corpus");
  gen_corpus->add_flag("--check", check, "verify the long-tail property (exit 3 on failure)");

  app.add_subcommand("train-classifier", "train the multi-label node classifier");

  auto* train_gen = app.add_subcommand("train-generator", "train the report generator");
  train_gen->add_option("--source", source_spec,
                        "knowledge source: ground_truth | corrupted:<a> | classifier:<ckpt> | none");

  auto* evaluate = app.add_subcommand("evaluate", "generate and score reports for a split");
  evaluate->add_option("--checkpoint", ckpt, "generator checkpoint")->required();
  evaluate->add_option("--source", source_spec, "knowledge source");
  evaluate->add_option("--split", split_name, "train | val | test");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate across node-accuracy levels");
  sweep->add_flag("--check", check, "verify the accuracy-quality trend (exit 3 on failure)");

  auto* report = app.add_subcommand("report", "emit tables and plots from sweep results");
  report->add_option("--input", report_input, "sweep.csv path (default: <out>/sweep.csv)");

  auto* generate = app.add_subcommand("generate", "one generated report per sample id line");
  generate->add_option("--checkpoint", ckpt, "generator checkpoint")->required();
  generate->add_option("--source", source_spec, "knowledge source");
  generate->add_option("--input", generate_input, "id list file (default: stdin)");

  std::string score_predictions, score_references;
  auto* score = app.add_subcommand("score", "score a predictions file against references");
  score->add_option("--predictions", score_predictions, "JSONL with {id, report}")->required();
  score->add_option("--references", score_references, "JSONL with {id, report}")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const mrg::ExperimentConfig cfg = resolve_config(args);
    if (gen_corpus->parsed()) return cmd_gen_corpus(cfg, check);
    if (app.got_subcommand("train-classifier")) return cmd_train_classifier(cfg);
    if (train_gen->parsed()) return cmd_train_generator(cfg, source_spec);
    if (evaluate->parsed()) return cmd_evaluate(cfg, ckpt, source_spec, split_name);
    if (sweep->parsed()) return cmd_sweep(cfg, check);
    if (report->parsed()) return cmd_report(cfg, report_input);
    if (generate->parsed()) return cmd_generate(cfg, ckpt, source_spec, generate_input);
    if (score->parsed()) return cmd_score(cfg, score_predictions, score_references);
    throw mrg::ConfigError("no subcommand selected");
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return 3;
  } catch (const mrg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const mrg::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mrg::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
