#include "epgn/networks.hpp"

#include <cmath>
#include <fstream>

#include "epgn/binary_io.hpp"
#include "epgn/error.hpp"

namespace epgn {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Linear: return "linear";
  }
  return "?";
}

std::size_t Mlp::in_dim() const { return layers.empty() ? 0 : layers.front().weight.rows(); }
std::size_t Mlp::out_dim() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  out.reserve(layers.size() * 2);
  for (const auto& layer : layers) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

void Mlp::set_parameters(std::span<const Tensor> params) {
  if (params.size() != layers.size() * 2) {
    throw Error(ErrorKind::Dimension, "set_parameters: expected " +
                                          std::to_string(layers.size() * 2) + " tensors");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (params[2 * i].shape() != layers[i].weight.shape() ||
        params[2 * i + 1].shape() != layers[i].bias.shape()) {
      throw Error(ErrorKind::Dimension, "set_parameters: shape change in layer " + std::to_string(i));
    }
    layers[i].weight = params[2 * i].detach();
    layers[i].bias = params[2 * i + 1].detach();
  }
}

Mlp Mlp::bind(Tape& tape) const {
  Mlp out = *this;
  for (auto& layer : out.layers) {
    layer.weight = tape.leaf(layer.weight);
    layer.bias = tape.leaf(layer.bias);
  }
  return out;
}

void Mlp::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 ||
        layer.bias.size() != layer.weight.cols()) {
      throw Error(ErrorKind::Dimension, "layer " + std::to_string(i) + " has inconsistent shapes");
    }
    if (i > 0 && layers[i - 1].weight.cols() != layer.weight.rows()) {
      throw Error(ErrorKind::Dimension, "layer " + std::to_string(i) + " does not chain");
    }
    for (const Tensor* t : {&layer.weight, &layer.bias}) {
      for (double v : t->values()) {
        if (!std::isfinite(v)) throw Error(ErrorKind::Numeric, "non-finite parameter");
      }
    }
  }
}

Tensor mlp_forward(const Mlp& net, const Tensor& x, Mode mode, RngStream* dropout_rng) {
  if (x.rank() != 2 || x.cols() != net.in_dim()) {
    throw Error(ErrorKind::Dimension, "network input " + shape_string(x.shape()) +
                                          " does not match width " + std::to_string(net.in_dim()));
  }
  Tensor h = x;
  for (const auto& layer : net.layers) {
    h = ops::add_bias(ops::matmul(h, layer.weight), layer.bias);
    switch (layer.activation) {
      case Activation::Relu: h = ops::relu(h); break;
      case Activation::Tanh: h = ops::tanh(h); break;
      case Activation::Linear: break;
    }
    if (mode == Mode::Train && layer.dropout > 0.0) {
      if (dropout_rng == nullptr) throw Error(ErrorKind::Contract, "train-mode dropout needs a random stream");
      h = ops::dropout(h, layer.dropout, *dropout_rng, true);
    }
  }
  return h;
}

void PgnModel::validate() const {
  f.validate();
  g.validate();
  critic.validate();
  if (f.in_dim() != feature_dim || g.out_dim() != feature_dim) {
    throw Error(ErrorKind::Dimension, "F input / G output must equal the feature width");
  }
  if (f.out_dim() != semantic_dim || g.in_dim() != semantic_dim) {
    throw Error(ErrorKind::Dimension, "F output / G input must equal the semantic width");
  }
  if (critic.in_dim() != feature_dim + semantic_dim || critic.out_dim() != 1) {
    throw Error(ErrorKind::Dimension, "critic must map D+K inputs to one score");
  }
}

DenseLayer init_dense(std::size_t in, std::size_t out, Activation act, double dropout,
                      RngStream& rng) {
  const double gain = act == Activation::Relu ? 2.0 : 1.0;
  const double stddev = std::sqrt(gain / static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = stddev * rng.normal();
  return DenseLayer{Tensor::matrix(in, out, std::move(w)), Tensor::zeros({out}), act, dropout};
}

PgnModel init_model(std::size_t feature_dim, std::size_t semantic_dim,
                    const ArchitectureOptions& arch, RngStream rng) {
  if (feature_dim == 0 || semantic_dim == 0) throw Error(ErrorKind::Contract, "init_model: dims must be >= 1");
  const double p = arch.dropout;
  PgnModel m;
  m.feature_dim = feature_dim;
  m.semantic_dim = semantic_dim;
  RngStream rf = rng.split("f");
  m.f.layers.push_back(init_dense(feature_dim, arch.hidden_f, Activation::Relu, p, rf));
  m.f.layers.push_back(init_dense(arch.hidden_f, semantic_dim, Activation::Relu, p, rf));
  RngStream rg = rng.split("g");
  m.g.layers.push_back(init_dense(semantic_dim, arch.hidden_g, Activation::Tanh, 0.0, rg));
  m.g.layers.push_back(init_dense(arch.hidden_g, feature_dim, arch.g_output, 0.0, rg));
  RngStream rd = rng.split("critic");
  m.critic.layers.push_back(
      init_dense(feature_dim + semantic_dim, arch.hidden_d, Activation::Relu, p, rd));
  m.critic.layers.push_back(init_dense(arch.hidden_d, 1, arch.d_output,
                                       arch.d_output == Activation::Relu ? p : 0.0, rd));
  return m;
}

Tensor f_forward(const PgnModel& m, const Tensor& x, Mode mode, RngStream* rng) {
  return mlp_forward(m.f, x, mode, rng);
}

Tensor g_forward(const PgnModel& m, const Tensor& a, Mode mode, RngStream* rng) {
  return mlp_forward(m.g, a, mode, rng);
}

Tensor d_forward(const PgnModel& m, const Tensor& x, const Tensor& a, Mode mode, RngStream* rng) {
  if (x.rank() != 2 || a.rank() != 2) throw Error(ErrorKind::Dimension, "critic inputs must be matrices");
  if (x.rows() != a.rows()) {
    throw Error(ErrorKind::Batch, "critic got " + std::to_string(x.rows()) + " feature rows and " +
                                      std::to_string(a.rows()) + " semantic rows");
  }
  if (x.cols() != m.feature_dim || a.cols() != m.semantic_dim) {
    throw Error(ErrorKind::Dimension, "critic input widths do not match the model");
  }
  return mlp_forward(m.critic, ops::concat_cols(x, a), mode, rng);
}

namespace {

void write_mlp(std::ostream& out, const Mlp& net) {
  for (const auto& layer : net.layers) {
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weight.rows()));
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(layer.weight.cols()));
    for (double v : layer.weight.values()) binio::write<double>(out, v);
    for (double v : layer.bias.values()) binio::write<double>(out, v);
  }
}

void read_mlp(std::istream& in, Mlp& net, const std::string& name) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& layer = net.layers[i];
    const auto rows = binio::read<std::uint32_t>(in, name + " layer rows");
    const auto cols = binio::read<std::uint32_t>(in, name + " layer cols");
    std::vector<double> w(static_cast<std::size_t>(rows) * cols);
    for (auto& v : w) v = binio::read<double>(in, name + " weights");
    std::vector<double> b(cols);
    for (auto& v : b) v = binio::read<double>(in, name + " bias");
    layer.weight = Tensor::matrix(rows, cols, std::move(w));
    layer.bias = Tensor::vector(std::move(b));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PgnModel& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
  out.write("EPGN1", 5);
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(model.feature_dim));
  binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(model.semantic_dim));
  write_mlp(out, model.f);
  write_mlp(out, model.g);
  write_mlp(out, model.critic);
  if (!out) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
}

PgnModel load_checkpoint(const std::filesystem::path& path, const ArchitectureOptions& arch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open checkpoint " + path.string());
  binio::expect_magic(in, "EPGN1", path.string());
  const auto d = binio::read<std::uint32_t>(in, "checkpoint header");
  const auto k = binio::read<std::uint32_t>(in, "checkpoint header");
  // Layer structure and activations come from the architecture options;
  // the file supplies shapes and values.
  PgnModel m;
  m.feature_dim = d;
  m.semantic_dim = k;
  const double p = arch.dropout;
  m.f.layers = {DenseLayer{{}, {}, Activation::Relu, p}, DenseLayer{{}, {}, Activation::Relu, p}};
  m.g.layers = {DenseLayer{{}, {}, Activation::Tanh, 0.0}, DenseLayer{{}, {}, arch.g_output, 0.0}};
  m.critic.layers = {DenseLayer{{}, {}, Activation::Relu, p},
                     DenseLayer{{}, {}, arch.d_output, arch.d_output == Activation::Relu ? p : 0.0}};
  read_mlp(in, m.f, "F");
  read_mlp(in, m.g, "G");
  read_mlp(in, m.critic, "critic");
  in.peek();
  if (!in.eof()) throw Error(ErrorKind::HeaderMismatch, "trailing bytes in checkpoint " + path.string());
  m.validate();
  return m;
}

bool bitwise_equal(const Mlp& a, const Mlp& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (!bitwise_equal(a.layers[i].weight, b.layers[i].weight) ||
        !bitwise_equal(a.layers[i].bias, b.layers[i].bias) ||
        a.layers[i].activation != b.layers[i].activation) {
      return false;
    }
  }
  return true;
}

bool bitwise_equal(const PgnModel& a, const PgnModel& b) {
  return a.feature_dim == b.feature_dim && a.semantic_dim == b.semantic_dim &&
         bitwise_equal(a.f, b.f) && bitwise_equal(a.g, b.g) && bitwise_equal(a.critic, b.critic);
}

}  // namespace epgn
