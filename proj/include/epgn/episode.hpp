#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <vector>

#include "epgn/config.hpp"
#include "epgn/dataio.hpp"
#include "epgn/networks.hpp"
#include "epgn/optim.hpp"
#include "epgn/rng.hpp"

namespace epgn {

struct Episode {
  std::vector<std::size_t> support_classes;  // sorted
  std::vector<std::size_t> refine_classes;   // sorted
};

// Uniform class-exclusive split of the seen classes; n_mimetic go to the
// refine set. Throws a split error unless n_mimetic < |seen|.
Episode sample_episode(const std::vector<std::size_t>& seen_classes, std::size_t n_mimetic,
                       RngStream& rng);

// Model plus everything that carries over between stages and episodes.
struct TrainingState {
  PgnModel model;
  AdamState critic_opt;
  AdamState generator_opt;  // F then G parameters
  AdamState refine_opt;     // G only, refine stage
};

// One stream per consumer, all split from the run seed.
struct TrainingStreams {
  RngStream init;
  RngStream episode;
  RngStream shuffle;
  RngStream dropout;
  RngStream tau;
  RngStream head;

  explicit TrainingStreams(std::uint64_t seed);
};

TrainingState init_training(const Dataset& ds, const TrainConfig& cfg, TrainingStreams& streams);

struct StageStats {
  double loss_mean = 0.0;  // mean over optimizer steps; NaN when no step ran
  std::size_t steps = 0;
};

// Base stage: epochs over support-class training instances. Each batch gets
// critic_steps critic updates, then one F/G update on the full generator loss.
StageStats train_base_stage(TrainingState& state, const Dataset& ds, const Episode& ep,
                            const TrainConfig& cfg, TrainingStreams& streams,
                            std::size_t episode_index = 0);

// Refine stage: G only, on refine-class training instances with the refine
// classes as candidates. Loss is reported per instance. No-op when the
// refine set is empty.
StageStats refine_stage(TrainingState& state, const Dataset& ds, const Episode& ep,
                        const TrainConfig& cfg, TrainingStreams& streams);

// Mean per-instance refine loss over all refine-class training instances.
double refine_loss_on(const PgnModel& model, const Dataset& ds, const Episode& ep, Distance metric);

// Per-class top-1 on the refine classes' training instances, refine classes
// as candidates. NaN when the refine set is empty.
double refine_accuracy(const PgnModel& model, const Dataset& ds, const Episode& ep, Distance metric);

struct EpisodeRecord {
  std::size_t episode = 0;
  double base_loss_mean = 0.0;
  double refine_loss_mean = 0.0;
  double refine_T = 0.0;
};

struct TrainingResult {
  PgnModel model;
  std::vector<EpisodeRecord> history;
};

using EpisodeCallback = std::function<void(const EpisodeRecord&, const TrainingState&)>;

// Validates the config against the dataset, initializes once, then runs
// cfg.episodes episodes of sample -> base stage -> refine stage.
TrainingResult run_training(const Dataset& ds, const TrainConfig& cfg,
                            const EpisodeCallback& on_episode = {});

// CSV with header episode,base_loss_mean,refine_loss_mean,refine_T.
std::string history_csv(const std::vector<EpisodeRecord>& history);
void write_history(const std::filesystem::path& path, const std::vector<EpisodeRecord>& history);

}  // namespace epgn
