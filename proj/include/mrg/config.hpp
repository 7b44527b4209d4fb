#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrg/model.hpp"

namespace mrg {

struct CorpusParams {
  int n = 1000;
  std::uint64_t seed = 7;
  double imbalance_exponent = 1.5;
  double train_ratio = 0.7, val_ratio = 0.1, test_ratio = 0.2;
};

struct TrainParams {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  int epochs = 30;
  int batch = 16;
  int queue_capacity = 256;
  bool hard_negatives = false;
  double positive_weight = 1.0;  // classifier BCE up-weighting of positives
  std::string precision = "double";  // or "float"
  std::uint64_t seed = 1;
};

struct EvalParams {
  std::string strategy = "greedy";  // or "beam"
  int beam_width = 3;
  int max_len = 48;
  std::string cider_variant = "d";  // or "plain"
};

struct SweepParams {
  std::vector<double> accuracies = {0.7, 0.8, 0.9};  // 1.0 is always added
  std::vector<std::uint64_t> seeds = {1, 2, 3};
};

// Flat sectioned key-value configuration. Every field has the documented
// default; file values override defaults, command-line overrides ("a.b=c")
// override the file.
struct ExperimentConfig {
  CorpusParams corpus;
  ModelConfig model;
  TrainParams train;
  EvalParams eval;
  SweepParams sweep;
  std::string output_dir = "out";

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig defaults() { return ExperimentConfig{}; }

  // key is "section.name", e.g. "train.lr" or "model.width".
  void set(const std::string& key, const std::string& value);
  void validate() const;
};

}  // namespace mrg
