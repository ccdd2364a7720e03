#include "epgn/gradcheck_suite.hpp"

#include <span>

#include "epgn/gradcheck.hpp"
#include "epgn/losses.hpp"
#include "epgn/networks.hpp"

namespace epgn {

namespace {

struct Toy {
  PgnModel model;
  Batch batch;
  Mlp head;
  std::vector<std::size_t> refine_labels;
  Tensor refine_candidates;
};

Tensor random_matrix(std::size_t r, std::size_t c, RngStream& rng, double lo, double hi) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::matrix(r, c, std::move(v));
}

std::size_t draw(RngStream& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

Toy make_toy(std::uint64_t seed) {
  RngStream rng = RngStream(seed).split("gradcheck-toy");
  const std::size_t d = draw(rng, 3, 6);
  const std::size_t k = draw(rng, 2, 5);
  const std::size_t s = draw(rng, 3, 4);
  const std::size_t n = draw(rng, 4, 6);
  ArchitectureOptions arch;
  arch.hidden_f = draw(rng, 4, 8);
  arch.hidden_g = draw(rng, 4, 8);
  arch.hidden_d = draw(rng, 4, 8);
  arch.dropout = 0.3;
  Toy toy;
  toy.model = init_model(d, k, arch, rng.split("init"));
  // Zero biases put dead ReLU rows exactly on the kink, where central
  // differences are meaningless.
  for (Mlp* net : {&toy.model.f, &toy.model.g, &toy.model.critic}) {
    for (auto& layer : net->layers) {
      std::vector<double> b(layer.bias.size());
      for (auto& v : b) v = 0.05 + 0.15 * rng.uniform();
      layer.bias = Tensor::vector(std::move(b));
    }
  }
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < s ? i : static_cast<std::size_t>(rng.below(s));
  toy.batch = make_batch(random_matrix(n, d, rng, 0.0, 1.0), labels, random_matrix(s, k, rng, 0.0, 1.0));
  toy.head = make_ce_head(d, s, rng.split("head"));
  toy.refine_labels = labels;
  toy.refine_candidates = random_matrix(s, k, rng, 0.0, 1.0);
  return toy;
}

// Parameter groups a check differentiates.
enum class Group { F, G, FG, Critic, Head };

std::vector<Tensor> group_params(const Toy& t, Group g) {
  std::vector<Tensor> out;
  const auto add = [&](const Mlp& net) {
    const auto p = net.parameters();
    out.insert(out.end(), p.begin(), p.end());
  };
  switch (g) {
    case Group::F: add(t.model.f); break;
    case Group::G: add(t.model.g); break;
    case Group::FG: add(t.model.f); add(t.model.g); break;
    case Group::Critic: add(t.model.critic); break;
    case Group::Head: add(t.head); break;
  }
  return out;
}

// Unlike Mlp::set_parameters this keeps tape links.
void assign(Mlp& net, std::span<const Tensor> params) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    net.layers[i].weight = params[2 * i];
    net.layers[i].bias = params[2 * i + 1];
  }
}

// Copy of the toy with the group's parameters replaced by params.
Toy with_params(const Toy& t, Group g, std::span<const Tensor> params) {
  Toy out = t;
  const auto nf = t.model.f.parameters().size();
  switch (g) {
    case Group::F: assign(out.model.f, params); break;
    case Group::G: assign(out.model.g, params); break;
    case Group::FG:
      assign(out.model.f, params.subspan(0, nf));
      assign(out.model.g, params.subspan(nf));
      break;
    case Group::Critic: assign(out.model.critic, params); break;
    case Group::Head: assign(out.head, params); break;
  }
  return out;
}

using ToyLoss = std::function<Tensor(const Toy&, RngStream&)>;

LossCheck check(const std::string& name, const Toy& toy, Group g, double tol, std::uint64_t seed,
                const ToyLoss& loss) {
  const ScalarObjective objective = [&](Tape&, std::span<const Tensor> params, RngStream rng) {
    const Toy t = with_params(toy, g, params);
    return loss(t, rng);
  };
  const auto params = group_params(toy, g);
  const GradCheckResult r = grad_check(objective, params, 1e-6, seed);
  LossCheck out;
  out.name = name;
  out.max_rel_error = r.max_rel_error;
  out.tolerance = tol;
  out.coordinates = r.coordinates;
  out.passed = r.max_rel_error < tol;
  return out;
}

}  // namespace

std::vector<LossCheck> run_gradcheck_suite(const SuiteOptions& opts) {
  const Toy toy = make_toy(opts.seed);
#ifdef EPGN_FAULT_INJECTION
  const bool flip = opts.fault_flip_a2v;
#else
  const bool flip = false;
#endif
  const std::uint64_t seed = opts.seed;
  std::vector<LossCheck> out;

  out.push_back(check("v2a", toy, Group::F, kGradTolerance, seed, [](const Toy& t, RngStream& r) {
    return loss_v2a(t.model, t.batch, Mode::Train, &r, Reduction::Sum);
  }));
  out.push_back(check("a2v", toy, Group::G, kGradTolerance, seed, [flip](const Toy& t, RngStream&) {
    return loss_a2v(t.model, t.batch, Reduction::Sum, flip);
  }));
  out.push_back(check("mce", toy, Group::FG, kGradTolerance, seed, [](const Toy& t, RngStream& r) {
    return mce_loss(t.model, t.batch, Mode::Train, &r, Reduction::Sum);
  }));
  out.push_back(check("ce_baseline", toy, Group::Head, kGradTolerance, seed,
                      [](const Toy& t, RngStream&) {
                        return ce_baseline_loss(t.head, t.batch, Reduction::Sum);
                      }));
  out.push_back(check("refine_euclidean", toy, Group::G, kGradTolerance, seed,
                      [](const Toy& t, RngStream&) {
                        return refine_loss(t.model, t.batch.features, t.refine_candidates,
                                           t.refine_labels, Distance::Euclidean);
                      }));
  out.push_back(check("refine_cosine", toy, Group::G, kGradTolerance, seed,
                      [](const Toy& t, RngStream&) {
                        return refine_loss(t.model, t.batch.features, t.refine_candidates,
                                           t.refine_labels, Distance::Cosine);
                      }));
  out.push_back(check("wgan_generator", toy, Group::FG, kGradTolerance, seed,
                      [](const Toy& t, RngStream& r) {
                        RngStream tau = r.split("tau");
                        return wgan_losses(t.model, t.batch, 10.0, PenaltyScope::Visual, Mode::Train,
                                           {&r, &tau})
                            .generator_objective;
                      }));
  out.push_back(check("gradient_penalty", toy, Group::Critic, kSecondOrderTolerance, seed,
                      [](const Toy& t, RngStream& r) {
                        RngStream tau = r.split("tau");
                        Tensor penalty;
                        const Tensor fake_a = f_forward(t.model, t.batch.features, Mode::Eval, nullptr);
                        const Tensor fake_x = g_forward(t.model, t.batch.semantics, Mode::Eval, nullptr);
                        critic_objective(t.model, t.batch, fake_x, fake_a, 10.0, PenaltyScope::Visual,
                                         Mode::Train, {&r, &tau}, &penalty);
                        return penalty;
                      }));
  out.push_back(check("critic_objective", toy, Group::Critic, kSecondOrderTolerance, seed,
                      [](const Toy& t, RngStream& r) {
                        RngStream tau = r.split("tau");
                        const Tensor fake_a = f_forward(t.model, t.batch.features, Mode::Eval, nullptr);
                        const Tensor fake_x = g_forward(t.model, t.batch.semantics, Mode::Eval, nullptr);
                        return critic_objective(t.model, t.batch, fake_x, fake_a, 10.0,
                                                PenaltyScope::Joint, Mode::Train, {&r, &tau});
                      }));
  out.push_back(check("total", toy, Group::FG, kGradTolerance, seed, [flip](const Toy& t, RngStream& r) {
    LossOptions o;
    o.reduction = Reduction::Sum;
    o.fault_flip_a2v = flip;
    return total_generator_loss(t.model, t.batch, LossWeights{}, o, Mode::Train, &r).total;
  }));
  return out;
}

}  // namespace epgn
