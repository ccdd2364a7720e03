#include "epgn/episode.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "epgn/error.hpp"
#include "epgn/evaluator.hpp"
#include "epgn/losses.hpp"

namespace epgn {

Episode sample_episode(const std::vector<std::size_t>& seen_classes, std::size_t n_mimetic,
                       RngStream& rng) {
  if (n_mimetic >= seen_classes.size()) {
    throw Error(ErrorKind::Split, "n_mimetic (" + std::to_string(n_mimetic) +
                                      ") must be smaller than the seen class count (" +
                                      std::to_string(seen_classes.size()) + ")");
  }
  std::vector<std::size_t> order(seen_classes);
  std::sort(order.begin(), order.end());
  rng.shuffle(order);
  Episode ep;
  ep.refine_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_mimetic));
  ep.support_classes.assign(order.begin() + static_cast<std::ptrdiff_t>(n_mimetic), order.end());
  std::sort(ep.refine_classes.begin(), ep.refine_classes.end());
  std::sort(ep.support_classes.begin(), ep.support_classes.end());
  return ep;
}

TrainingStreams::TrainingStreams(std::uint64_t seed) {
  const RngStream root(seed);
  init = root.split("init");
  episode = root.split("episode");
  shuffle = root.split("shuffle");
  dropout = root.split("dropout");
  tau = root.split("tau");
  head = root.split("head");
}

TrainingState init_training(const Dataset& ds, const TrainConfig& cfg, TrainingStreams& streams) {
  TrainingState s;
  s.model = init_model(ds.feature_dim(), ds.semantic_dim(), cfg.architecture(), streams.init);
  return s;
}

namespace {

// Training instances whose label is in classes, plus each one's position
// within classes.
struct Subset {
  std::vector<std::size_t> instances;
  std::vector<std::size_t> positions;
};

Subset select_instances(const Dataset& ds, const std::vector<std::size_t>& classes) {
  std::vector<std::size_t> pos(ds.num_classes(), classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) pos[classes[i]] = i;
  Subset out;
  for (const std::size_t idx : ds.train_idx) {
    const std::size_t p = pos[ds.labels[idx]];
    if (p == classes.size()) continue;
    out.instances.push_back(idx);
    out.positions.push_back(p);
  }
  return out;
}

std::vector<Tensor> concat_params(const Mlp& a, const Mlp& b) {
  auto out = a.parameters();
  const auto pb = b.parameters();
  out.insert(out.end(), pb.begin(), pb.end());
  return out;
}

void apply_adam(Mlp& net, std::span<const Tensor> grads, AdamState& opt, double lr) {
  auto params = net.parameters();
  adam_step(params, grads, opt, lr);
  net.set_parameters(params);
}

// Shuffled order of 0..n-1 for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  return order;
}

struct BatchRows {
  std::vector<std::size_t> rows;
  std::vector<std::size_t> labels;
};

BatchRows take_batch(const Subset& subset, const std::vector<std::size_t>& order, std::size_t start,
                     std::size_t size) {
  BatchRows b;
  const std::size_t end = std::min(order.size(), start + size);
  for (std::size_t i = start; i < end; ++i) {
    b.rows.push_back(subset.instances[order[i]]);
    b.labels.push_back(subset.positions[order[i]]);
  }
  return b;
}

}  // namespace

StageStats train_base_stage(TrainingState& state, const Dataset& ds, const Episode& ep,
                            const TrainConfig& cfg, TrainingStreams& streams,
                            std::size_t episode_index) {
  StageStats stats;
  stats.loss_mean = std::numeric_limits<double>::quiet_NaN();
  if (cfg.epochs_per_episode == 0) return stats;

  const Subset support = select_instances(ds, ep.support_classes);
  if (support.instances.empty()) {
    throw Error(ErrorKind::Data, "no training instances in the episode's support classes");
  }
  const Tensor support_prototypes = gather_rows(ds.attributes, ep.support_classes);
  const LossOptions opts = cfg.loss_options();
  LossStreams critic_streams{&streams.dropout, &streams.tau};

  Mlp head;
  AdamState head_opt;
  if (cfg.ce_baseline && cfg.weights.gamma != 0.0) {
    head = make_ce_head(ds.feature_dim(), ep.support_classes.size(),
                        streams.head.split(static_cast<std::uint64_t>(episode_index)));
  }
  const bool use_head = !head.layers.empty();

  double loss_sum = 0.0;
  PgnModel& m = state.model;
  for (std::size_t epoch = 0; epoch < cfg.epochs_per_episode; ++epoch) {
    const auto order = epoch_order(support.instances.size(), streams.shuffle);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const BatchRows rows = take_batch(support, order, start, cfg.batch_size);
      const Batch batch = make_batch(gather_rows(ds.features, rows.rows), rows.labels,
                                     support_prototypes);

      // F and G are fixed while the critic trains on this batch.
      const Tensor fake_a = f_forward(m, batch.features, Mode::Train, &streams.dropout);
      const Tensor fake_x = g_forward(m, batch.semantics, Mode::Train, &streams.dropout);
      for (std::size_t c = 0; c < cfg.critic_steps; ++c) {
        Tape tape;
        PgnModel bound = m;
        bound.critic = m.critic.bind(tape);
        const Tensor obj = critic_objective(bound, batch, fake_x, fake_a, cfg.weights.lambda,
                                            opts.penalty_scope, Mode::Train, critic_streams);
        const auto grads = tape.backward(obj, bound.critic.parameters());
        apply_adam(m.critic, grads, state.critic_opt, cfg.base_lr);
      }

      Tape tape;
      PgnModel bound = m;
      bound.f = m.f.bind(tape);
      bound.g = m.g.bind(tape);
      const Mlp bound_head = use_head ? head.bind(tape) : Mlp{};
      const GeneratorLossParts parts =
          total_generator_loss(bound, batch, cfg.weights, opts, Mode::Train, &streams.dropout,
                               use_head ? &bound_head : nullptr);
      std::vector<Tensor> wrt = concat_params(bound.f, bound.g);
      const std::size_t nf = bound.f.parameters().size();
      if (use_head) {
        const auto hp = bound_head.parameters();
        wrt.insert(wrt.end(), hp.begin(), hp.end());
      }
      const auto grads = tape.backward(parts.total, wrt);

      auto fg = m.f.parameters();
      const auto gp = m.g.parameters();
      fg.insert(fg.end(), gp.begin(), gp.end());
      adam_step(fg, std::span<const Tensor>(grads.data(), fg.size()), state.generator_opt,
                cfg.base_lr);
      m.f.set_parameters(std::span<const Tensor>(fg.data(), nf));
      m.g.set_parameters(std::span<const Tensor>(fg.data() + nf, fg.size() - nf));
      if (use_head) {
        apply_adam(head, std::span<const Tensor>(grads.data() + fg.size(), grads.size() - fg.size()),
                   head_opt, cfg.base_lr);
      }
      loss_sum += parts.total.item();
      ++stats.steps;
    }
  }
  stats.loss_mean = loss_sum / static_cast<double>(stats.steps);
  return stats;
}

StageStats refine_stage(TrainingState& state, const Dataset& ds, const Episode& ep,
                        const TrainConfig& cfg, TrainingStreams& streams) {
  StageStats stats;
  stats.loss_mean = std::numeric_limits<double>::quiet_NaN();
  if (ep.refine_classes.empty()) return stats;

  const Subset refine = select_instances(ds, ep.refine_classes);
  if (refine.instances.empty()) return stats;
  const Tensor candidates = gather_rows(ds.attributes, ep.refine_classes);
  const double lr = cfg.base_lr * cfg.refine_lr_ratio;

  double loss_sum = 0.0;
  std::size_t seen = 0;
  PgnModel& m = state.model;
  for (std::size_t epoch = 0; epoch < cfg.refine_epochs; ++epoch) {
    const auto order = epoch_order(refine.instances.size(), streams.shuffle);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const BatchRows rows = take_batch(refine, order, start, cfg.batch_size);
      Tape tape;
      PgnModel bound = m;
      bound.g = m.g.bind(tape);
      const Tensor loss = refine_loss(bound, gather_rows(ds.features, rows.rows), candidates,
                                      rows.labels, cfg.distance);
      const auto grads = tape.backward(loss, bound.g.parameters());
      apply_adam(m.g, grads, state.refine_opt, lr);
      loss_sum += loss.item();
      seen += rows.rows.size();
      ++stats.steps;
    }
  }
  stats.loss_mean = loss_sum / static_cast<double>(seen);
  return stats;
}

double refine_loss_on(const PgnModel& model, const Dataset& ds, const Episode& ep, Distance metric) {
  const Subset refine = select_instances(ds, ep.refine_classes);
  if (refine.instances.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Tensor loss = refine_loss(model, gather_rows(ds.features, refine.instances),
                                  gather_rows(ds.attributes, ep.refine_classes), refine.positions,
                                  metric);
  return loss.item() / static_cast<double>(refine.instances.size());
}

double refine_accuracy(const PgnModel& model, const Dataset& ds, const Episode& ep, Distance metric) {
  const Subset refine = select_instances(ds, ep.refine_classes);
  if (refine.instances.empty()) return std::numeric_limits<double>::quiet_NaN();
  const PredictionTask task = build_task(model, ds.attributes, ep.refine_classes, metric);
  const auto pred = predict(task, gather_rows(ds.features, refine.instances));
  std::vector<std::size_t> labels;
  labels.reserve(refine.instances.size());
  for (const std::size_t idx : refine.instances) labels.push_back(ds.labels[idx]);
  return per_class_top1(pred, labels, ep.refine_classes).mean;
}

TrainingResult run_training(const Dataset& ds, const TrainConfig& cfg,
                            const EpisodeCallback& on_episode) {
  validate(ds);
  validate(cfg);
  if (cfg.n_mimetic >= ds.seen_classes.size()) {
    throw Error(ErrorKind::Split, "n_mimetic must be smaller than the seen class count");
  }
  TrainingStreams streams(cfg.seed);
  TrainingState state = init_training(ds, cfg, streams);
  TrainingResult result;
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    const Episode ep = sample_episode(ds.seen_classes, cfg.n_mimetic, streams.episode);
    const StageStats base = train_base_stage(state, ds, ep, cfg, streams, e);
    const StageStats refine = refine_stage(state, ds, ep, cfg, streams);
    EpisodeRecord rec;
    rec.episode = e + 1;
    rec.base_loss_mean = base.loss_mean;
    rec.refine_loss_mean = refine.loss_mean;
    rec.refine_T = refine_accuracy(state.model, ds, ep, cfg.distance);
    result.history.push_back(rec);
    if (on_episode) on_episode(rec, state);
  }
  result.model = std::move(state.model);
  return result;
}

std::string history_csv(const std::vector<EpisodeRecord>& history) {
  std::ostringstream out;
  out << "episode,base_loss_mean,refine_loss_mean,refine_T\n";
  out << std::setprecision(17);
  for (const auto& r : history) {
    out << r.episode << ',' << r.base_loss_mean << ',' << r.refine_loss_mean << ',' << r.refine_T
        << '\n';
  }
  return out.str();
}

void write_history(const std::filesystem::path& path, const std::vector<EpisodeRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << history_csv(history);
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

}  // namespace epgn
