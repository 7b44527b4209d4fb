#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "mrg/checkpoint.hpp"
#include "mrg/classifier.hpp"
#include "mrg/config.hpp"
#include "mrg/corpus.hpp"
#include "mrg/decoder.hpp"
#include "mrg/model.hpp"
#include "mrg/multilabel_metrics.hpp"
#include "mrg/nlg_metrics.hpp"
#include "mrg/objectives.hpp"
#include "mrg/optimizer.hpp"

namespace mrg {

// Where the generator's node knowledge comes from:
//   ground_truth        — the sample's own labels
//   corrupted:<acc>     — labels bit-flipped to a mean per-bit accuracy
//   classifier:<ckpt>   — thresholded predictions of a trained classifier
//   none                — the all-zero vector (knowledge ablation)
struct KnowledgeSource {
  enum class Kind { kGroundTruth, kCorrupted, kClassifier, kZero };
  Kind kind = Kind::kGroundTruth;
  double accuracy = 1.0;
  std::string classifier_checkpoint;

  static KnowledgeSource parse(const std::string& spec) {
    KnowledgeSource s;
    if (spec == "ground_truth") {
      s.kind = Kind::kGroundTruth;
    } else if (spec == "none") {
      s.kind = Kind::kZero;
    } else if (spec.rfind("corrupted:", 0) == 0) {
      s.kind = Kind::kCorrupted;
      try {
        s.accuracy = std::stod(spec.substr(10));
      } catch (const std::exception&) {
        throw ConfigError("bad corrupted accuracy in '" + spec + "'");
      }
      if (!(s.accuracy > 0.0 && s.accuracy <= 1.0))
        throw ConfigError("corrupted accuracy must lie in (0, 1]");
    } else if (spec.rfind("classifier:", 0) == 0) {
      s.kind = Kind::kClassifier;
      s.classifier_checkpoint = spec.substr(11);
      if (s.classifier_checkpoint.empty())
        throw ConfigError("classifier source needs a checkpoint path");
    } else {
      throw ConfigError("unknown knowledge source '" + spec +
                        "' (ground_truth | corrupted:<a> | classifier:<ckpt> | none)");
    }
    return s;
  }

  std::string describe() const {
    switch (kind) {
      case Kind::kGroundTruth: return "ground_truth";
      case Kind::kZero: return "none";
      case Kind::kCorrupted: return "corrupted:" + std::to_string(accuracy);
      case Kind::kClassifier: return "classifier:" + classifier_checkpoint;
    }
    return "?";
  }
};

struct MetricReport {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0;
  double rouge_l = 0, meteor = 0, cider = 0;

  static const char* csv_header() { return "bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,cider"; }
  std::string csv_row() const;
};

inline std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string MetricReport::csv_row() const {
  std::string out;
  for (double v : {bleu1, bleu2, bleu3, bleu4, rouge_l, meteor, cider}) {
    if (!out.empty()) out += ",";
    out += format_value(v);
  }
  return out;
}

// Everything a training/eval pass needs about one corpus row, tokenized once.
template <typename S>
struct PreparedSample {
  int corpus_id = 0;
  MatrixOf<S> patches;
  MatrixOf<S> image_row;
  std::vector<int> text_itc;    // [CLS] + report tokens
  std::vector<int> text_itm;    // [ENC] + report tokens
  std::vector<int> dec_input;   // [BOS] + report tokens
  std::vector<int> dec_target;  // report tokens + [EOS]
  std::vector<int> knowledge;   // node names joined by [SEP], or the sentinel
  NodeLabelVector labels;
  NodeLabelVector knowledge_labels;
  std::string report;
};

template <typename S>
std::vector<PreparedSample<S>> prepare_samples(const std::vector<Sample>& corpus,
                                               const std::vector<int>& ids,
                                               const KnowledgeGraph& graph,
                                               const Vocabulary& vocab, const ModelConfig& mcfg,
                                               const KnowledgeSource& source,
                                               const NodeClassifier<S>* classifier,
                                               std::uint64_t corruption_seed) {
  if (source.kind == KnowledgeSource::Kind::kClassifier && classifier == nullptr)
    throw ConfigError("classifier knowledge source without a classifier");
  std::vector<PreparedSample<S>> out;
  out.reserve(ids.size());
  for (int id : ids) {
    const Sample& s = corpus.at(id);
    PreparedSample<S> p;
    p.corpus_id = id;
    p.report = s.report;
    p.patches = patches_from_image<S>(s.image, mcfg.patch).value();
    p.image_row = image_as_row<S>(s.image).value();
    const std::vector<int> report_ids = vocab.tokenize(s.report);
    if (static_cast<int>(report_ids.size()) + 2 > mcfg.max_len)
      throw ContractError("report of " + std::to_string(report_ids.size()) +
                          " tokens does not fit max_len " + std::to_string(mcfg.max_len));
    p.text_itc = report_ids;
    p.text_itc.insert(p.text_itc.begin(), Vocabulary::kCls);
    p.text_itm = report_ids;
    p.text_itm.insert(p.text_itm.begin(), Vocabulary::kEnc);
    p.dec_input = report_ids;
    p.dec_input.insert(p.dec_input.begin(), Vocabulary::kBos);
    p.dec_target = report_ids;
    p.dec_target.push_back(Vocabulary::kEos);
    p.labels = s.node_labels;
    switch (source.kind) {
      case KnowledgeSource::Kind::kGroundTruth: p.knowledge_labels = s.node_labels; break;
      case KnowledgeSource::Kind::kZero:
        p.knowledge_labels.assign(s.node_labels.size(), 0);
        break;
      case KnowledgeSource::Kind::kCorrupted:
        p.knowledge_labels = corrupt_labels(s.node_labels, source.accuracy,
                                            hash_seed(corruption_seed, std::uint64_t(id)));
        break;
      case KnowledgeSource::Kind::kClassifier: {
        const auto probs = classify_nodes(s.image, *classifier);
        p.knowledge_labels =
            threshold_to_labels(probs.value().template cast<double>().eval(), 0.5);
        break;
      }
    }
    p.knowledge = nodes_to_knowledge_text(p.knowledge_labels, graph, vocab);
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// generator training
// ---------------------------------------------------------------------------

template <typename S>
struct EnhancedFeatures {
  Tensor<S> enhanced;  // [patches+1, width]
};

template <typename S>
Tensor<S> enhanced_for(const PreparedSample<S>& s, const ReportModel<S>& model) {
  const auto vis = encode_image(Tensor<S>(s.patches), model);
  const Tensor<S> h_k = encode_knowledge(s.knowledge, model);
  return fuse_cross_attention(vis.f_i, h_k, model);
}

template <typename S>
struct GeneratorTrainer {
  ModelConfig mcfg;
  TrainParams tcfg;
  ReportModel<S> model;
  ReportModel<S> momentum_model;
  ContrastiveState<S> queue;
  std::unique_ptr<AdamW<S>> optimizer;
  long step_count = 0;

  GeneratorTrainer(const ModelConfig& mc, const TrainParams& tc, std::uint64_t model_seed)
      : mcfg(mc), tcfg(tc), model(ReportModel<S>::init(mc, model_seed)),
        momentum_model(model.clone_detached()) {
    queue.capacity = tc.queue_capacity;
    typename AdamW<S>::Options opt;
    opt.lr = tc.lr;
    opt.weight_decay = tc.weight_decay;
    optimizer = std::make_unique<AdamW<S>>(model.named_params(), opt);
  }

  // Builds the three losses for a batch, recording on the active tape if one
  // is open. The contrastive queue is updated as a side effect.
  LossBreakdown<S> build_losses(const std::vector<const PreparedSample<S>*>& batch, Rng& rng) {
    const int n = static_cast<int>(batch.size());
    if (n < 1) throw ContractError("empty training batch");

    // momentum projections first; momentum parameters never require grad, so
    // nothing here lands on the tape
    MatrixOf<S> mom_img(n, mcfg.proj_dim), mom_txt(n, mcfg.proj_dim);
    for (int i = 0; i < n; ++i) {
      const Tensor<S> enhanced = enhanced_for(*batch[i], momentum_model);
      mom_img.row(i) = project_visual_cls(enhanced, momentum_model).value().row(0);
      mom_txt.row(i) = encode_text(batch[i]->text_itc, momentum_model,
                                   TextMode::kBidirectional)
                           .cls_projection.value()
                           .row(0);
    }

    std::vector<Tensor<S>> enhanced;
    std::vector<Tensor<S>> img_proj_rows, txt_proj_rows;
    enhanced.reserve(n);
    for (int i = 0; i < n; ++i) {
      enhanced.push_back(enhanced_for(*batch[i], model));
      img_proj_rows.push_back(project_visual_cls(enhanced[i], model));
      txt_proj_rows.push_back(
          encode_text(batch[i]->text_itc, model, TextMode::kBidirectional).cls_projection);
    }
    Tensor<S> itc = itc_loss(concat_rows(img_proj_rows), concat_rows(txt_proj_rows), mom_img,
                             mom_txt, model.tau, queue);

    // matching pairs: every positive plus one in-batch mismatched text per image
    std::vector<Tensor<S>> cls_rows;
    std::vector<int> itm_labels;
    const bool positives_only = n < 2;
    std::vector<int> neg_of(n, -1);
    if (!positives_only) {
      if (tcfg.hard_negatives) {
        const double tau_v = double(model.tau.item());
        for (int i = 0; i < n; ++i) {
          std::vector<double> w(n, 0.0);
          double mx = -1e300;
          for (int j = 0; j < n; ++j)
            if (j != i) {
              w[j] = double(img_proj_rows[i].value().row(0).dot(mom_txt.row(j))) / tau_v;
              mx = std::max(mx, w[j]);
            }
          double z = 0;
          for (int j = 0; j < n; ++j)
            if (j != i) z += (w[j] = std::exp(w[j] - mx));
          double u = rng.uniform() * z;
          int pick = i == 0 ? 1 : 0;
          for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            if (u < w[j]) {
              pick = j;
              break;
            }
            u -= w[j];
          }
          neg_of[i] = pick;
        }
      } else {
        const int offset = 1 + static_cast<int>(rng.uniform_int(std::uint64_t(n - 1)));
        for (int i = 0; i < n; ++i) neg_of[i] = (i + offset) % n;
      }
    }
    for (int i = 0; i < n; ++i) {
      const auto pos = encode_text(batch[i]->text_itm, model, TextMode::kWithImageCross,
                                   &enhanced[i]);
      cls_rows.push_back(take_rows(pos.h_t, 0, 1));
      itm_labels.push_back(1);
    }
    if (!positives_only)
      for (int i = 0; i < n; ++i) {
        const auto neg = encode_text(batch[neg_of[i]]->text_itm, model,
                                     TextMode::kWithImageCross, &enhanced[i]);
        cls_rows.push_back(take_rows(neg.h_t, 0, 1));
        itm_labels.push_back(0);
      }
    Tensor<S> itm = itm_loss(concat_rows(cls_rows), itm_labels, model.itm_w, model.itm_b);

    Tensor<S> lm_sum = Tensor<S>::scalar(S(0), false);
    for (int i = 0; i < n; ++i) {
      const Tensor<S> logits = forward_causal(batch[i]->dec_input, enhanced[i], model);
      lm_sum = add(lm_sum, lm_loss(logits, batch[i]->dec_target));
    }
    Tensor<S> lm = scale(lm_sum, S(1) / S(n));
    return total_loss(itc, itm, lm);
  }

  LossBreakdown<S> train_step(const std::vector<const PreparedSample<S>*>& batch, Rng& rng) {
    Tape<S> tape;
    typename Tape<S>::Scope scope(tape);
    LossBreakdown<S> breakdown = build_losses(batch, rng);
    optimizer->zero_grad();
    tape.backward(breakdown.total_tensor);
    optimizer->step();
    auto& tau_v = model.tau.value()(0, 0);
    tau_v = std::min(S(0.5), std::max(S(0.005), tau_v));

    auto online = model.named_params();
    auto momentum = momentum_model.named_params();
    momentum_update(online, momentum, mcfg.momentum);
    ++step_count;
    return breakdown;
  }

  // Loss values only: no tape, no optimizer step, queue restored afterwards.
  LossBreakdown<S> evaluate_losses(const std::vector<const PreparedSample<S>*>& batch, Rng& rng) {
    const auto saved_img = queue.image_queue;
    const auto saved_txt = queue.text_queue;
    LossBreakdown<S> breakdown = build_losses(batch, rng);
    queue.image_queue = saved_img;
    queue.text_queue = saved_txt;
    return breakdown;
  }
};

// Greedy (or beam) generation for a prepared sample set.
template <typename S>
std::vector<std::string> generate_reports(const ReportModel<S>& model,
                                          const std::vector<PreparedSample<S>>& samples,
                                          const Vocabulary& vocab, const EvalParams& eval) {
  GenerationConfig gen{eval.strategy, eval.beam_width, eval.max_len};
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const Tensor<S> enhanced = enhanced_for(s, model);
    const Generation g = generate(enhanced, model, gen);
    out.push_back(vocab.detokenize(g.tokens));
  }
  return out;
}

inline MetricReport score_reports(const std::vector<std::string>& predictions,
                                  const std::vector<std::string>& references,
                                  CiderVariant variant = CiderVariant::kD) {
  if (predictions.empty() || predictions.size() != references.size())
    throw ContractError("score_reports: prediction/reference counts differ or are empty");
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    cands.push_back(Vocabulary::split_words(predictions[i]));
    refs.push_back({Vocabulary::split_words(references[i])});
  }
  MetricReport r;
  const BleuResult b = corpus_bleu(cands, refs);
  r.bleu1 = b.bleu[0];
  r.bleu2 = b.bleu[1];
  r.bleu3 = b.bleu[2];
  r.bleu4 = b.bleu[3];
  double rouge_sum = 0, meteor_sum = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    rouge_sum += rouge_l(cands[i], refs[i][0]);
    meteor_sum += meteor_lite(cands[i], refs[i][0]);
  }
  r.rouge_l = rouge_sum / double(cands.size());
  r.meteor = meteor_sum / double(cands.size());
  r.cider = cands.size() >= 2 ? cider(cands, refs, variant).mean : 0.0;
  return r;
}

// Full generator training with per-step loss logging and best-validation-BLEU4
// checkpointing. Returns the best checkpoint's parameter snapshot.
template <typename S>
struct GeneratorRunResult {
  double best_val_bleu4 = -1.0;
  int best_epoch = -1;
  double final_train_lm = 0.0;
  std::map<std::string, MatrixOf<double>> best_params;
};

template <typename S>
GeneratorRunResult<S> train_generator(GeneratorTrainer<S>& trainer,
                                      const std::vector<PreparedSample<S>>& train_set,
                                      const std::vector<PreparedSample<S>>& val_set,
                                      const Vocabulary& vocab, const EvalParams& eval,
                                      const std::string& log_path = "",
                                      const std::string& val_log_path = "") {
  std::ofstream log, val_log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IoError("cannot write training log: " + log_path);
    log << "step,l_itc,l_itm,l_lm,total,tau\n";
  }
  if (!val_log_path.empty()) {
    val_log.open(val_log_path);
    if (!val_log) throw IoError("cannot write validation log: " + val_log_path);
    val_log << "epoch,val_bleu4\n";
  }

  GeneratorRunResult<S> result;
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  auto snapshot = [&](const ReportModel<S>& m) {
    std::map<std::string, MatrixOf<double>> snap;
    for (const auto& [name, p] : m.named_params().items)
      snap[name] = p.value().template cast<double>();
    return snap;
  };

  for (int epoch = 0; epoch < trainer.tcfg.epochs; ++epoch) {
    Rng epoch_rng(hash_seed(trainer.tcfg.seed, 0x9000 + std::uint64_t(epoch)));
    epoch_rng.shuffle(order);
    double lm_mean = 0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += trainer.tcfg.batch) {
      std::vector<const PreparedSample<S>*> batch;
      for (std::size_t i = at; i < std::min(order.size(), at + trainer.tcfg.batch); ++i)
        batch.push_back(&train_set[order[i]]);
      Rng step_rng(hash_seed(trainer.tcfg.seed, 0xB000 + std::uint64_t(trainer.step_count)));
      const auto losses = trainer.train_step(batch, step_rng);
      lm_mean += double(losses.l_lm);
      ++batches;
      if (log)
        log << trainer.step_count << "," << format_value(double(losses.l_itc)) << ","
            << format_value(double(losses.l_itm)) << "," << format_value(double(losses.l_lm))
            << "," << format_value(double(losses.total)) << ","
            << format_value(double(trainer.model.tau.item())) << "\n";
    }
    result.final_train_lm = lm_mean / std::max(1, batches);

    if (!val_set.empty()) {
      const auto predictions = generate_reports(trainer.model, val_set, vocab, eval);
      std::vector<std::string> references;
      for (const auto& s : val_set) references.push_back(s.report);
      const MetricReport m = score_reports(predictions, references);
      if (val_log) val_log << epoch << "," << format_value(m.bleu4) << "\n";
      if (m.bleu4 > result.best_val_bleu4) {
        result.best_val_bleu4 = m.bleu4;
        result.best_epoch = epoch;
        result.best_params = snapshot(trainer.model);
      }
    }
  }
  if (val_set.empty()) {
    result.best_params = snapshot(trainer.model);
    result.best_epoch = trainer.tcfg.epochs - 1;
  }
  return result;
}

template <typename S>
void load_params_from_snapshot(ReportModel<S>& model,
                               const std::map<std::string, MatrixOf<double>>& snap) {
  auto params = model.named_params();
  for (auto& [name, p] : params.items) {
    const auto it = snap.find(name);
    if (it == snap.end()) throw ContractError("snapshot is missing parameter '" + name + "'");
    p.value() = it->second.template cast<S>();
  }
}

// ---------------------------------------------------------------------------
// classifier training
// ---------------------------------------------------------------------------

template <typename S>
MatrixOf<double> classifier_probabilities(const NodeClassifier<S>& cls,
                                          const std::vector<PreparedSample<S>>& samples) {
  MatrixOf<double> probs(Index(samples.size()), KnowledgeGraph::kNodeCount);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor<S> p = sigmoid(classifier_logits(Tensor<S>(samples[i].image_row), cls));
    probs.row(Index(i)) = p.value().row(0).template cast<double>();
  }
  return probs;
}

template <typename S>
MatrixOf<double> label_matrix(const std::vector<PreparedSample<S>>& samples) {
  MatrixOf<double> labels(Index(samples.size()), KnowledgeGraph::kNodeCount);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (int j = 0; j < KnowledgeGraph::kNodeCount; ++j)
      labels(Index(i), j) = samples[i].labels[j];
  return labels;
}

template <typename S>
struct ClassifierRunResult {
  NodeClassifier<S> best;
  MultilabelMetrics best_val;
  int best_epoch = -1;
};

template <typename S>
ClassifierRunResult<S> train_classifier(const std::vector<PreparedSample<S>>& train_set,
                                        const std::vector<PreparedSample<S>>& val_set,
                                        const ModelConfig& mcfg, const TrainParams& tcfg,
                                        const std::string& log_path = "") {
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IoError("cannot write classifier log: " + log_path);
    log << "epoch,train_bce,val_aauc,val_af1,val_aacc,val_map\n";
  }
  NodeClassifier<S> cls = NodeClassifier<S>::init(mcfg.image_side, tcfg.seed);
  typename AdamW<S>::Options opt;
  opt.lr = tcfg.lr;
  opt.weight_decay = tcfg.weight_decay;
  AdamW<S> optimizer(cls.named_params(), opt);

  ClassifierRunResult<S> result{cls, MultilabelMetrics{}, -1};
  double best_f1 = -1.0;
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::map<std::string, MatrixOf<double>> best_snap;

  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    Rng epoch_rng(hash_seed(tcfg.seed, 0xC000 + std::uint64_t(epoch)));
    epoch_rng.shuffle(order);
    double epoch_loss = 0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += tcfg.batch) {
      Tape<S> tape;
      typename Tape<S>::Scope scope(tape);
      Tensor<S> loss_sum = Tensor<S>::scalar(S(0));
      int count = 0;
      for (std::size_t i = at; i < std::min(order.size(), at + tcfg.batch); ++i) {
        const auto& s = train_set[order[i]];
        const Tensor<S> probs = sigmoid(classifier_logits(Tensor<S>(s.image_row), cls));
        loss_sum = add(loss_sum, bce_loss(probs, s.labels, S(tcfg.positive_weight)));
        ++count;
      }
      Tensor<S> loss = scale(loss_sum, S(1) / S(count));
      optimizer.zero_grad();
      tape.backward(loss);
      optimizer.step();
      epoch_loss += double(loss.item());
      ++batches;
    }

    MultilabelMetrics val{};
    if (!val_set.empty())
      val = compute_multilabel_metrics(classifier_probabilities(cls, val_set),
                                       label_matrix(val_set));
    if (log)
      log << epoch << "," << format_value(epoch_loss / std::max(1, batches)) << ","
          << format_value(val.a_auc) << "," << format_value(val.a_f1) << ","
          << format_value(val.a_acc) << "," << format_value(val.m_ap) << "\n";
    if (val_set.empty() || val.a_f1 >= best_f1) {
      best_f1 = val.a_f1;
      result.best_val = val;
      result.best_epoch = epoch;
      best_snap.clear();
      for (const auto& [name, p] : cls.named_params().items)
        best_snap[name] = p.value().template cast<double>();
    }
  }
  auto best_params = result.best.named_params();
  for (auto& [name, p] : best_params.items) p.value() = best_snap.at(name).template cast<S>();
  return result;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  std::uint64_t seed = 0;
  double accuracy = 1.0;
  MetricReport metrics;
};

inline double spearman_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
      const double mid = 0.5 * double(i + j - 1);
      for (std::size_t k = i; k < j; ++k) r[order[k]] = mid;
      i = j;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  const double n = double(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0 || vy == 0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

}  // namespace mrg
