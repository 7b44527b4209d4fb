#include "mrg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "mrg/errors.hpp"

namespace mrg {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long i = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& key, const std::string& v, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(static_cast<T>(parse(key, item)));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "corpus.n")
    corpus.n = int(parse_int(key, v));
  else if (key == "corpus.seed")
    corpus.seed = std::uint64_t(parse_int(key, v));
  else if (key == "corpus.imbalance_exponent")
    corpus.imbalance_exponent = parse_double(key, v);
  else if (key == "corpus.train_ratio")
    corpus.train_ratio = parse_double(key, v);
  else if (key == "corpus.val_ratio")
    corpus.val_ratio = parse_double(key, v);
  else if (key == "corpus.test_ratio")
    corpus.test_ratio = parse_double(key, v);
  else if (key == "model.width")
    model.width = int(parse_int(key, v));
  else if (key == "model.layers")
    model.layers = int(parse_int(key, v));
  else if (key == "model.heads")
    model.heads = int(parse_int(key, v));
  else if (key == "model.proj_dim")
    model.proj_dim = int(parse_int(key, v));
  else if (key == "model.patch")
    model.patch = int(parse_int(key, v));
  else if (key == "model.image_side")
    model.image_side = int(parse_int(key, v));
  else if (key == "model.max_len")
    model.max_len = int(parse_int(key, v));
  else if (key == "model.momentum")
    model.momentum = parse_double(key, v);
  else if (key == "model.share_mode")
    model.share_mode = v;
  else if (key == "train.lr")
    train.lr = parse_double(key, v);
  else if (key == "train.weight_decay")
    train.weight_decay = parse_double(key, v);
  else if (key == "train.epochs")
    train.epochs = int(parse_int(key, v));
  else if (key == "train.batch")
    train.batch = int(parse_int(key, v));
  else if (key == "train.queue_capacity")
    train.queue_capacity = int(parse_int(key, v));
  else if (key == "train.hard_negatives")
    train.hard_negatives = parse_bool(key, v);
  else if (key == "train.positive_weight")
    train.positive_weight = parse_double(key, v);
  else if (key == "train.precision")
    train.precision = v;
  else if (key == "train.seed")
    train.seed = std::uint64_t(parse_int(key, v));
  else if (key == "eval.strategy")
    eval.strategy = v;
  else if (key == "eval.beam_width")
    eval.beam_width = int(parse_int(key, v));
  else if (key == "eval.max_len")
    eval.max_len = int(parse_int(key, v));
  else if (key == "eval.cider_variant")
    eval.cider_variant = v;
  else if (key == "sweep.accuracies")
    sweep.accuracies = parse_list<double>(key, v, parse_double);
  else if (key == "sweep.seeds")
    sweep.seeds = parse_list<std::uint64_t>(key, v, parse_int);
  else if (key == "output.dir")
    output_dir = v;
  else
    throw ConfigError("unknown configuration key: " + key);
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (section.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": key outside any [section]");
    cfg.set(section + "." + key, line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  if (corpus.n < 1) throw ConfigError("corpus.n must be >= 1");
  const double ratio_sum = corpus.train_ratio + corpus.val_ratio + corpus.test_ratio;
  if (std::abs(ratio_sum - 1.0) > 1e-9) throw ConfigError("corpus split ratios must sum to 1");
  if (train.epochs < 1 || train.batch < 1) throw ConfigError("train.epochs/batch must be >= 1");
  if (train.precision != "double" && train.precision != "float")
    throw ConfigError("train.precision must be double or float");
  if (eval.strategy != "greedy" && eval.strategy != "beam")
    throw ConfigError("eval.strategy must be greedy or beam");
  if (eval.cider_variant != "d" && eval.cider_variant != "plain")
    throw ConfigError("eval.cider_variant must be d or plain");
  if (train.positive_weight <= 0) throw ConfigError("train.positive_weight must be positive");
  if (eval.max_len + 1 > model.max_len)
    throw ConfigError("eval.max_len must leave room for [BOS] within model.max_len");
  for (double a : sweep.accuracies)
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("sweep accuracies must lie in (0, 1]");
  // model dims are validated when the model is built (vocab size is known then)
  if (model.width % model.heads != 0) throw ConfigError("model.width must divide by heads");
}

}  // namespace mrg
