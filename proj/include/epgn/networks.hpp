#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

#include "epgn/rng.hpp"
#include "epgn/tensor.hpp"

namespace epgn {

enum class Activation { Relu, Tanh, Linear };

std::string_view to_string(Activation a);

enum class Mode { Train, Eval };

// Affine map x * weight + bias followed by an activation and, in train
// mode, inverted dropout at the given rate. weight is in_dim x out_dim.
struct DenseLayer {
  Tensor weight;
  Tensor bias;
  Activation activation = Activation::Linear;
  double dropout = 0.0;
};

struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t in_dim() const;
  std::size_t out_dim() const;

  // weight0, bias0, weight1, bias1, ...
  std::vector<Tensor> parameters() const;
  void set_parameters(std::span<const Tensor> params);
  // Copy whose parameters are leaves of the tape.
  Mlp bind(Tape& tape) const;
  // Throws unless consecutive layers chain and all values are finite.
  void validate() const;
};

Tensor mlp_forward(const Mlp& net, const Tensor& x, Mode mode, RngStream* dropout_rng);

struct ArchitectureOptions {
  std::size_t hidden_f = 1800;
  std::size_t hidden_g = 1800;
  std::size_t hidden_d = 1600;
  double dropout = 0.5;
  Activation g_output = Activation::Relu;
  // Linear keeps the critic unbounded; Relu is the literal alternative.
  Activation d_output = Activation::Linear;
};

// F: visual -> semantic, G: semantic -> visual prototype, critic: [x || a] -> score.
struct PgnModel {
  Mlp f;
  Mlp g;
  Mlp critic;
  std::size_t feature_dim = 0;
  std::size_t semantic_dim = 0;

  void validate() const;
};

PgnModel init_model(std::size_t feature_dim, std::size_t semantic_dim,
                    const ArchitectureOptions& arch, RngStream rng);

// Fan-in scaled Gaussian init: sqrt(2/fan_in) for ReLU layers, sqrt(1/fan_in)
// otherwise; zero biases.
DenseLayer init_dense(std::size_t in, std::size_t out, Activation act, double dropout,
                      RngStream& rng);

Tensor f_forward(const PgnModel& m, const Tensor& x, Mode mode, RngStream* rng);
Tensor g_forward(const PgnModel& m, const Tensor& a, Mode mode, RngStream* rng);
Tensor d_forward(const PgnModel& m, const Tensor& x, const Tensor& a, Mode mode, RngStream* rng);

// Binary checkpoint: "EPGN1", u32 D, u32 K, then for F, G and the critic in
// turn, per layer u32 rows, u32 cols, rows*cols f64 weights (row-major) and
// cols f64 biases. Little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, const PgnModel& model);
PgnModel load_checkpoint(const std::filesystem::path& path, const ArchitectureOptions& arch);

bool bitwise_equal(const Mlp& a, const Mlp& b);
bool bitwise_equal(const PgnModel& a, const PgnModel& b);

}  // namespace epgn
