#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "epgn/networks.hpp"
#include "epgn/rng.hpp"
#include "epgn/tensor.hpp"

namespace epgn {

enum class Reduction { Mean, Sum };
enum class Distance { Euclidean, Cosine };
std::string to_string(Distance d);
Distance parse_distance(const std::string& s);
// Which interpolated input the gradient penalty differentiates: the visual
// part only, or the concatenated visual and semantic parts.
enum class PenaltyScope { Visual, Joint };

struct LossWeights {
  double alpha = 1.0;   // visual -> semantic regression
  double beta = 1.0;    // semantic -> visual regression
  double gamma = 1.0;   // multi-modal cross-entropy
  double lambda = 10.0;  // gradient penalty
};

void validate(const LossWeights& w);

// One training batch. semantics row i equals support_prototypes row labels[i].
struct Batch {
  Tensor features;            // b x D
  Tensor semantics;           // b x K
  std::vector<std::size_t> labels;  // index into support_prototypes
  Tensor support_prototypes;  // S x K
};

void validate(const Batch& batch);
Batch make_batch(Tensor features, std::vector<std::size_t> labels, Tensor support_prototypes);

struct LossOptions {
  Reduction reduction = Reduction::Mean;
  PenaltyScope penalty_scope = PenaltyScope::Visual;
  bool ce_baseline = false;
  bool fault_flip_a2v = false;  // test-only: negates the A->V gradient
};

// Random streams a loss evaluation consumes.
struct LossStreams {
  RngStream* dropout = nullptr;
  RngStream* tau = nullptr;
};

// Building blocks on precomputed network outputs.
Tensor reduce_rows(const Tensor& per_row, Reduction r);
Tensor regression_loss(const Tensor& prediction, const Tensor& target, Reduction r);
// Rows of the log-softmax picked at the given labels, negated and reduced.
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels, Reduction r);
Tensor softmax_rows(const Tensor& logits);
// Pairwise distances between rows of x (n x D) and prototypes (R x D).
Tensor pairwise_distance(const Tensor& x, const Tensor& prototypes, Distance metric);

// sum_i ||F(x_i) - a_i||^2 (or its batch mean).
Tensor loss_v2a(const PgnModel& m, const Batch& b, Mode mode, RngStream* dropout, Reduction r);
// sum_i ||G(a_i) - x_i||^2 (or its batch mean).
Tensor loss_a2v(const PgnModel& m, const Batch& b, Reduction r, bool fault_flip = false);

struct WganTerms {
  Tensor critic_objective;     // minimized over the critic
  Tensor generator_objective;  // minimized over F and G
  Tensor penalty;              // mean (||grad|| - 1)^2, unweighted
  Tensor real_score;           // mean D(x, a)
  Tensor fake_score;           // mean D(G(a), F(x))
};

// Gradient penalty on interpolates; differentiable w.r.t. the critic.
Tensor gradient_penalty(const PgnModel& m, const Tensor& x_hat, const Tensor& a_hat,
                        PenaltyScope scope, Mode mode, RngStream* dropout);

Tensor critic_objective(const PgnModel& m, const Batch& b, const Tensor& fake_x,
                        const Tensor& fake_a, double lambda, PenaltyScope scope, Mode mode,
                        const LossStreams& rng, Tensor* penalty_out = nullptr);

WganTerms wgan_losses(const PgnModel& m, const Batch& b, double lambda, PenaltyScope scope,
                      Mode mode, const LossStreams& rng);

// Row softmax of <x_i, G(a_j)> over support classes.
Tensor mce_probs_visual(const PgnModel& m, const Batch& b);
// Row softmax of <F(x_i), a_j> over support classes.
Tensor mce_probs_semantic(const PgnModel& m, const Batch& b, Mode mode, RngStream* dropout);
Tensor mce_loss(const PgnModel& m, const Batch& b, Mode mode, RngStream* dropout, Reduction r);
// mce_loss on precomputed F(x) and G(A_S).
Tensor mce_loss_from(const Tensor& x, const Tensor& inferred_semantics,
                     const Tensor& support_visual, const Tensor& support_semantic,
                     const std::vector<std::size_t>& labels, Reduction r);

// Cross-entropy of an auxiliary affine head over the batch features.
Tensor ce_baseline_loss(const Mlp& head, const Batch& b, Reduction r);
Mlp make_ce_head(std::size_t feature_dim, std::size_t classes, RngStream rng);

struct GeneratorLossParts {
  Tensor total;
  double adversarial = 0.0;
  double v2a = 0.0;
  double a2v = 0.0;
  double classification = 0.0;
};

// generator_objective + alpha*L_v2a + beta*L_a2v + gamma*(MCE or CE). Terms
// with zero weight are not evaluated at all.
GeneratorLossParts total_generator_loss(const PgnModel& m, const Batch& b, const LossWeights& w,
                                        const LossOptions& opts, Mode mode, RngStream* dropout,
                                        const Mlp* ce_head = nullptr);

// -sum_t log softmax_k(-d(x_t, G(a_k)))[y_t] over the candidate prototypes.
Tensor refine_loss(const PgnModel& m, const Tensor& x, const Tensor& candidate_semantics,
                   const std::vector<std::size_t>& labels, Distance metric);

}  // namespace epgn
