#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "epgn/dataio.hpp"
#include "epgn/losses.hpp"
#include "epgn/networks.hpp"

namespace epgn {

struct TrainConfig {
  LossWeights weights;
  double base_lr = 5e-5;
  double refine_lr_ratio = 0.1;
  std::size_t epochs_per_episode = 100;
  std::size_t refine_epochs = 10;
  std::size_t episodes = 20;
  std::size_t batch_size = 32;
  std::size_t n_mimetic = 10;  // 0 disables the refine stage
  std::size_t critic_steps = 5;
  Distance distance = Distance::Euclidean;
  double dropout = 0.5;
  Activation g_output = Activation::Relu;
  Reduction loss_reduction = Reduction::Mean;
  bool ce_baseline = false;
  std::uint64_t seed = 1;

  std::size_t hidden_f = 1800;
  std::size_t hidden_g = 1800;
  std::size_t hidden_d = 1600;
  PenaltyScope penalty_scope = PenaltyScope::Visual;
  Activation d_output = Activation::Linear;
  NormalizationScope normalization = NormalizationScope::Train;
  std::size_t checkpoint_every = 0;  // episodes between checkpoints; 0 = final only

  ArchitectureOptions architecture() const;
  LossOptions loss_options() const;
};

// Throws a usage error on out-of-range values.
void validate(const TrainConfig& cfg);

// Flat "key = value" text with one line per field, in a fixed order.
std::string to_text(const TrainConfig& cfg);
// Applies one setting; unknown keys and malformed values are usage errors.
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
// Applies every "key = value" line ('#' starts a comment) on top of cfg.
TrainConfig parse_config_text(const std::string& text, TrainConfig cfg = {});
// defaults < config file text < explicit overrides.
TrainConfig resolve_config(const std::string& file_text,
                           const std::map<std::string, std::string>& overrides);

std::string config_digest(const TrainConfig& cfg);

}  // namespace epgn
