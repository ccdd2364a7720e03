#include "epgn/config.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "epgn/error.hpp"
#include "epgn/rng.hpp"

namespace epgn {

ArchitectureOptions TrainConfig::architecture() const {
  ArchitectureOptions a;
  a.hidden_f = hidden_f;
  a.hidden_g = hidden_g;
  a.hidden_d = hidden_d;
  a.dropout = dropout;
  a.g_output = g_output;
  a.d_output = d_output;
  return a;
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.reduction = loss_reduction;
  o.penalty_scope = penalty_scope;
  o.ce_baseline = ce_baseline;
  return o;
}

void validate(const TrainConfig& c) {
  const auto fail = [](const std::string& msg) { throw Error(ErrorKind::Usage, msg); };
  const auto& w = c.weights;
  if (!(w.alpha >= 0 && w.beta >= 0 && w.gamma >= 0 && w.lambda >= 0)) fail("alpha, beta, gamma, lambda must be >= 0");
  if (!(c.base_lr > 0) || !std::isfinite(c.base_lr)) fail("base_lr must be > 0");
  if (!(c.refine_lr_ratio > 0) || !std::isfinite(c.refine_lr_ratio)) fail("refine_lr_ratio must be > 0");
  if (c.epochs_per_episode < 1) fail("epochs_per_episode must be >= 1");
  if (c.episodes < 1) fail("episodes must be >= 1");
  if (c.refine_epochs < 1) fail("refine_epochs must be >= 1");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (c.critic_steps < 1) fail("critic_steps must be >= 1");
  if (!(c.dropout >= 0 && c.dropout < 1)) fail("dropout must be in [0, 1)");
  if (c.hidden_f < 1 || c.hidden_g < 1 || c.hidden_d < 1) fail("hidden widths must be >= 1");
  if (c.g_output == Activation::Tanh || c.d_output == Activation::Tanh) fail("output activations are relu or linear");
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw Error(ErrorKind::Usage, key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw Error(ErrorKind::Usage, key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorKind::Usage, key + ": expected true or false, got '" + v + "'");
}

Activation parse_output_activation(const std::string& key, const std::string& v) {
  if (v == "relu") return Activation::Relu;
  if (v == "linear") return Activation::Linear;
  throw Error(ErrorKind::Usage, key + ": expected relu or linear, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string scope_name(NormalizationScope s) {
  switch (s) {
    case NormalizationScope::Train: return "train";
    case NormalizationScope::All: return "all";
    case NormalizationScope::None: return "none";
  }
  return "?";
}

}  // namespace

std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "alpha = " << fmt_double(c.weights.alpha) << '\n'
      << "beta = " << fmt_double(c.weights.beta) << '\n'
      << "gamma = " << fmt_double(c.weights.gamma) << '\n'
      << "lambda = " << fmt_double(c.weights.lambda) << '\n'
      << "base_lr = " << fmt_double(c.base_lr) << '\n'
      << "refine_lr_ratio = " << fmt_double(c.refine_lr_ratio) << '\n'
      << "epochs_per_episode = " << c.epochs_per_episode << '\n'
      << "refine_epochs = " << c.refine_epochs << '\n'
      << "episodes = " << c.episodes << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "n_mimetic = " << c.n_mimetic << '\n'
      << "critic_steps = " << c.critic_steps << '\n'
      << "distance = " << to_string(c.distance) << '\n'
      << "dropout = " << fmt_double(c.dropout) << '\n'
      << "g_output = " << to_string(c.g_output) << '\n'
      << "loss_reduction = " << (c.loss_reduction == Reduction::Mean ? "mean" : "sum") << '\n'
      << "ce_baseline = " << (c.ce_baseline ? "true" : "false") << '\n'
      << "seed = " << c.seed << '\n'
      << "hidden_f = " << c.hidden_f << '\n'
      << "hidden_g = " << c.hidden_g << '\n'
      << "hidden_d = " << c.hidden_d << '\n'
      << "penalty_scope = " << (c.penalty_scope == PenaltyScope::Visual ? "visual" : "joint") << '\n'
      << "d_output = " << to_string(c.d_output) << '\n'
      << "normalization = " << scope_name(c.normalization) << '\n'
      << "checkpoint_every = " << c.checkpoint_every << '\n';
  return out.str();
}

void apply_setting(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "alpha") c.weights.alpha = parse_double(key, v);
  else if (key == "beta") c.weights.beta = parse_double(key, v);
  else if (key == "gamma") c.weights.gamma = parse_double(key, v);
  else if (key == "lambda") c.weights.lambda = parse_double(key, v);
  else if (key == "base_lr") c.base_lr = parse_double(key, v);
  else if (key == "refine_lr_ratio") c.refine_lr_ratio = parse_double(key, v);
  else if (key == "epochs_per_episode") c.epochs_per_episode = parse_uint(key, v);
  else if (key == "refine_epochs") c.refine_epochs = parse_uint(key, v);
  else if (key == "episodes") c.episodes = parse_uint(key, v);
  else if (key == "batch_size") c.batch_size = parse_uint(key, v);
  else if (key == "n_mimetic") c.n_mimetic = parse_uint(key, v);
  else if (key == "critic_steps") c.critic_steps = parse_uint(key, v);
  else if (key == "distance") c.distance = parse_distance(v);
  else if (key == "dropout") c.dropout = parse_double(key, v);
  else if (key == "g_output") c.g_output = parse_output_activation(key, v);
  else if (key == "loss_reduction") {
    if (v == "mean") c.loss_reduction = Reduction::Mean;
    else if (v == "sum") c.loss_reduction = Reduction::Sum;
    else throw Error(ErrorKind::Usage, "loss_reduction: expected mean or sum, got '" + v + "'");
  } else if (key == "ce_baseline") c.ce_baseline = parse_bool(key, v);
  else if (key == "seed") c.seed = parse_uint(key, v);
  else if (key == "hidden_f") c.hidden_f = parse_uint(key, v);
  else if (key == "hidden_g") c.hidden_g = parse_uint(key, v);
  else if (key == "hidden_d") c.hidden_d = parse_uint(key, v);
  else if (key == "penalty_scope") {
    if (v == "visual") c.penalty_scope = PenaltyScope::Visual;
    else if (v == "joint") c.penalty_scope = PenaltyScope::Joint;
    else throw Error(ErrorKind::Usage, "penalty_scope: expected visual or joint, got '" + v + "'");
  } else if (key == "d_output") c.d_output = parse_output_activation(key, v);
  else if (key == "normalization") {
    if (v == "train") c.normalization = NormalizationScope::Train;
    else if (v == "all") c.normalization = NormalizationScope::All;
    else if (v == "none") c.normalization = NormalizationScope::None;
    else throw Error(ErrorKind::Usage, "normalization: expected train, all or none, got '" + v + "'");
  } else if (key == "checkpoint_every") c.checkpoint_every = parse_uint(key, v);
  else throw Error(ErrorKind::Usage, "unknown config key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text, TrainConfig cfg) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Usage, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    apply_setting(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

TrainConfig resolve_config(const std::string& file_text,
                           const std::map<std::string, std::string>& overrides) {
  TrainConfig cfg = parse_config_text(file_text);
  for (const auto& [k, v] : overrides) apply_setting(cfg, k, v);
  validate(cfg);
  return cfg;
}

std::string config_digest(const TrainConfig& cfg) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(to_text(cfg));
  return out.str();
}

}  // namespace epgn
