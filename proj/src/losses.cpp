#include "epgn/losses.hpp"

#include <cmath>
#include <optional>

#include "epgn/error.hpp"

namespace epgn {

using namespace ops;

void validate(const LossWeights& w) {
  if (!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0 && w.lambda >= 0.0)) {
    throw Error(ErrorKind::Contract, "loss weights must be non-negative");
  }
}

void validate(const Batch& b) {
  if (b.features.rank() != 2 || b.semantics.rank() != 2 || b.support_prototypes.rank() != 2) {
    throw Error(ErrorKind::Dimension, "batch tensors must be matrices");
  }
  if (b.features.rows() != b.semantics.rows() || b.features.rows() != b.labels.size()) {
    throw Error(ErrorKind::Batch, "batch row counts disagree");
  }
  if (b.semantics.cols() != b.support_prototypes.cols()) {
    throw Error(ErrorKind::Dimension, "batch semantics and support prototypes differ in width");
  }
  const std::size_t k = b.semantics.cols();
  for (std::size_t i = 0; i < b.labels.size(); ++i) {
    const std::size_t y = b.labels[i];
    if (y >= b.support_prototypes.rows()) {
      throw Error(ErrorKind::LabelRange, "batch label " + std::to_string(y) + " outside the support set");
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (b.semantics.at(i, j) != b.support_prototypes.at(y, j)) {
        throw Error(ErrorKind::Data, "batch semantics row " + std::to_string(i) +
                                         " differs from its class prototype");
      }
    }
  }
}

Batch make_batch(Tensor features, std::vector<std::size_t> labels, Tensor support_prototypes) {
  const std::size_t k = support_prototypes.cols();
  std::vector<double> sem;
  sem.reserve(labels.size() * k);
  for (std::size_t y : labels) {
    if (y >= support_prototypes.rows()) {
      throw Error(ErrorKind::LabelRange, "label " + std::to_string(y) + " outside the support set");
    }
    const auto row = support_prototypes.values().subspan(y * k, k);
    sem.insert(sem.end(), row.begin(), row.end());
  }
  Batch b{std::move(features), Tensor::matrix(labels.size(), k, std::move(sem)), std::move(labels),
          std::move(support_prototypes)};
  if (b.features.rank() != 2 || b.features.rows() != b.labels.size()) {
    throw Error(ErrorKind::Batch, "feature rows do not match label count");
  }
  return b;
}

Tensor reduce_rows(const Tensor& per_row, Reduction r) {
  return r == Reduction::Mean ? mean(per_row) : sum(per_row);
}

Tensor regression_loss(const Tensor& prediction, const Tensor& target, Reduction r) {
  return reduce_rows(sq_norm_cols(sub(prediction, target)), r);
}

namespace {

Tensor one_hot(std::size_t rows, std::size_t cols, const std::vector<std::size_t>& labels) {
  std::vector<double> v(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    if (labels[i] >= cols) throw Error(ErrorKind::LabelRange, "label outside the class set");
    v[i * cols + labels[i]] = 1.0;
  }
  return Tensor::matrix(rows, cols, std::move(v));
}

Tape* tape_of(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->tracked()) return t->tape();
  }
  return nullptr;
}

Tensor interpolate(const Tensor& real, const Tensor& fake, const Tensor& tau) {
  const std::size_t w = real.cols();
  const Tensor t = broadcast_cols(tau, w);
  return add(mul(real, t), mul(fake, affine(t, -1.0, 1.0)));
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels, Reduction r) {
  if (logits.rank() != 2 || logits.rows() != labels.size()) {
    throw Error(ErrorKind::Batch, "cross_entropy: logits rows do not match labels");
  }
  const Tensor picked = sum_cols(mul(logits, one_hot(logits.rows(), logits.cols(), labels)));
  return reduce_rows(sub(logsumexp_cols(logits), picked), r);
}

Tensor softmax_rows(const Tensor& logits) {
  return exp(sub(logits, broadcast_cols(logsumexp_cols(logits), logits.cols())));
}

Tensor pairwise_distance(const Tensor& x, const Tensor& prototypes, Distance metric) {
  if (x.rank() != 2 || prototypes.rank() != 2 || x.cols() != prototypes.cols()) {
    throw Error(ErrorKind::Dimension, "pairwise_distance: width mismatch " +
                                          shape_string(x.shape()) + " vs " +
                                          shape_string(prototypes.shape()));
  }
  const std::size_t n = x.rows(), r = prototypes.rows();
  if (metric == Distance::Euclidean) {
    const Tensor xx = broadcast_cols(sq_norm_cols(x), r);
    const Tensor pp = broadcast_rows(sq_norm_cols(prototypes), n);
    return sub(add(xx, pp), scale(matmul(x, prototypes, false, true), 2.0));
  }
  constexpr double kNormFloor = 1e-12;
  const auto unit_rows = [](const Tensor& v) {
    const Tensor inv = safe_inv(clamp_min(ops::sqrt(sq_norm_cols(v)), kNormFloor));
    return mul(v, broadcast_cols(inv, v.cols()));
  };
  return affine(matmul(unit_rows(x), unit_rows(prototypes), false, true), -1.0, 1.0);
}

Tensor loss_v2a(const PgnModel& m, const Batch& b, Mode mode, RngStream* dropout, Reduction r) {
  return regression_loss(f_forward(m, b.features, mode, dropout), b.semantics, r);
}

Tensor loss_a2v(const PgnModel& m, const Batch& b, Reduction r, bool fault_flip) {
  Tensor generated = g_forward(m, b.semantics, Mode::Eval, nullptr);
  if (fault_flip) generated = grad_flip(generated);
  return regression_loss(generated, b.features, r);
}

Tensor gradient_penalty(const PgnModel& m, const Tensor& x_hat, const Tensor& a_hat,
                        PenaltyScope scope, Mode mode, RngStream* dropout) {
  const Tensor& w0 = m.critic.layers.front().weight;
  Tape* tape = tape_of({&w0, &x_hat, &a_hat});
  std::optional<Tape> local;
  if (tape == nullptr) tape = &local.emplace();

  const Tensor xh = x_hat.tracked() ? x_hat : tape->leaf(x_hat);
  const Tensor ah = (scope == PenaltyScope::Joint && !a_hat.tracked()) ? tape->leaf(a_hat) : a_hat;
  const Tensor scores = d_forward(m, xh, ah, mode, dropout);
  std::vector<Tensor> wrt{xh};
  if (scope == PenaltyScope::Joint) wrt.push_back(ah);
  // Rows are independent, so the gradient of the summed score holds each
  // row's input gradient.
  const auto grads = tape->backward(sum(scores), wrt, /*create_graph=*/true);
  Tensor sq = sq_norm_cols(grads[0]);
  if (scope == PenaltyScope::Joint) sq = add(sq, sq_norm_cols(grads[1]));
  const Tensor penalty = mean(square(affine(ops::sqrt(sq), 1.0, -1.0)));
  return local ? penalty.detach() : penalty;
}

namespace {

Tensor draw_tau(std::size_t rows, RngStream* tau) {
  if (tau == nullptr) throw Error(ErrorKind::Contract, "wgan losses need an interpolation stream");
  std::vector<double> v(rows);
  for (auto& t : v) t = tau->uniform();
  return Tensor::vector(std::move(v));
}

}  // namespace

Tensor critic_objective(const PgnModel& m, const Batch& b, const Tensor& fake_x,
                        const Tensor& fake_a, double lambda, PenaltyScope scope, Mode mode,
                        const LossStreams& rng, Tensor* penalty_out) {
  const Tensor real = mean(d_forward(m, b.features, b.semantics, mode, rng.dropout));
  const Tensor fake = mean(d_forward(m, fake_x, fake_a, mode, rng.dropout));
  const Tensor tau = draw_tau(b.features.rows(), rng.tau);
  const Tensor x_hat = interpolate(b.features, fake_x, tau);
  const Tensor a_hat = interpolate(b.semantics, fake_a, tau);
  const Tensor penalty = gradient_penalty(m, x_hat, a_hat, scope, mode, rng.dropout);
  if (penalty_out != nullptr) *penalty_out = penalty;
  // -(E[D(real)] - E[D(fake)] - lambda * penalty)
  return add(sub(fake, real), scale(penalty, lambda));
}

WganTerms wgan_losses(const PgnModel& m, const Batch& b, double lambda, PenaltyScope scope,
                      Mode mode, const LossStreams& rng) {
  const Tensor fake_a = f_forward(m, b.features, mode, rng.dropout);
  const Tensor fake_x = g_forward(m, b.semantics, mode, rng.dropout);
  WganTerms t;
  t.real_score = mean(d_forward(m, b.features, b.semantics, mode, rng.dropout));
  t.fake_score = mean(d_forward(m, fake_x, fake_a, mode, rng.dropout));
  const Tensor tau = draw_tau(b.features.rows(), rng.tau);
  t.penalty = gradient_penalty(m, interpolate(b.features, fake_x, tau),
                               interpolate(b.semantics, fake_a, tau), scope, mode, rng.dropout);
  t.critic_objective = add(sub(t.fake_score, t.real_score), scale(t.penalty, lambda));
  t.generator_objective = scale(t.fake_score, -1.0);
  return t;
}

Tensor mce_probs_visual(const PgnModel& m, const Batch& b) {
  const Tensor prototypes = g_forward(m, b.support_prototypes, Mode::Eval, nullptr);
  return softmax_rows(matmul(b.features, prototypes, false, true));
}

Tensor mce_probs_semantic(const PgnModel& m, const Batch& b, Mode mode, RngStream* dropout) {
  const Tensor inferred = f_forward(m, b.features, mode, dropout);
  return softmax_rows(matmul(inferred, b.support_prototypes, false, true));
}

Tensor mce_loss_from(const Tensor& x, const Tensor& inferred_semantics,
                     const Tensor& support_visual, const Tensor& support_semantic,
                     const std::vector<std::size_t>& labels, Reduction r) {
  const Tensor visual = cross_entropy(matmul(x, support_visual, false, true), labels, r);
  const Tensor semantic =
      cross_entropy(matmul(inferred_semantics, support_semantic, false, true), labels, r);
  return add(visual, semantic);
}

Tensor mce_loss(const PgnModel& m, const Batch& b, Mode mode, RngStream* dropout, Reduction r) {
  const Tensor inferred = f_forward(m, b.features, mode, dropout);
  const Tensor prototypes = g_forward(m, b.support_prototypes, Mode::Eval, nullptr);
  return mce_loss_from(b.features, inferred, prototypes, b.support_prototypes, b.labels, r);
}

Mlp make_ce_head(std::size_t feature_dim, std::size_t classes, RngStream rng) {
  Mlp head;
  head.layers.push_back(init_dense(feature_dim, classes, Activation::Linear, 0.0, rng));
  return head;
}

Tensor ce_baseline_loss(const Mlp& head, const Batch& b, Reduction r) {
  if (head.out_dim() != b.support_prototypes.rows()) {
    throw Error(ErrorKind::Dimension, "CE head width must equal the support class count");
  }
  return cross_entropy(mlp_forward(head, b.features, Mode::Eval, nullptr), b.labels, r);
}

GeneratorLossParts total_generator_loss(const PgnModel& m, const Batch& b, const LossWeights& w,
                                        const LossOptions& opts, Mode mode, RngStream* dropout,
                                        const Mlp* ce_head) {
  validate(w);
  const Tensor inferred = f_forward(m, b.features, mode, dropout);
  const Tensor generated = g_forward(m, b.semantics, mode, dropout);
  const Tensor fake_score = mean(d_forward(m, generated, inferred, mode, dropout));

  GeneratorLossParts parts;
  Tensor total = scale(fake_score, -1.0);
  parts.adversarial = total.item();
  if (w.alpha != 0.0) {
    const Tensor v2a = regression_loss(inferred, b.semantics, opts.reduction);
    parts.v2a = v2a.item();
    total = add(total, scale(v2a, w.alpha));
  }
  if (w.beta != 0.0) {
    const Tensor g = opts.fault_flip_a2v ? grad_flip(generated) : generated;
    const Tensor a2v = regression_loss(g, b.features, opts.reduction);
    parts.a2v = a2v.item();
    total = add(total, scale(a2v, w.beta));
  }
  if (w.gamma != 0.0) {
    Tensor cls;
    if (opts.ce_baseline) {
      if (ce_head == nullptr) throw Error(ErrorKind::Contract, "CE baseline needs a classifier head");
      cls = ce_baseline_loss(*ce_head, b, opts.reduction);
    } else {
      const Tensor prototypes = g_forward(m, b.support_prototypes, mode, dropout);
      cls = mce_loss_from(b.features, inferred, prototypes, b.support_prototypes, b.labels,
                          opts.reduction);
    }
    parts.classification = cls.item();
    total = add(total, scale(cls, w.gamma));
  }
  parts.total = total;
  return parts;
}

Tensor refine_loss(const PgnModel& m, const Tensor& x, const Tensor& candidate_semantics,
                   const std::vector<std::size_t>& labels, Distance metric) {
  if (candidate_semantics.rank() != 2 || candidate_semantics.rows() == 0) {
    throw Error(ErrorKind::EmptyClassSet, "refine_loss needs at least one candidate class");
  }
  const Tensor prototypes = g_forward(m, candidate_semantics, Mode::Eval, nullptr);
  const Tensor d = pairwise_distance(x, prototypes, metric);
  return cross_entropy(scale(d, -1.0), labels, Reduction::Sum);
}

std::string to_string(Distance d) { return d == Distance::Euclidean ? "euclidean" : "cosine"; }

Distance parse_distance(const std::string& s) {
  if (s == "euclidean") return Distance::Euclidean;
  if (s == "cosine") return Distance::Cosine;
  throw Error(ErrorKind::Usage, "unknown distance '" + s + "' (euclidean|cosine)");
}

}  // namespace epgn
