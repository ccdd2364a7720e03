#include "epgn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>
#include <sstream>

#include "epgn/error.hpp"
#include "epgn/kernels.hpp"
#include "epgn/rng.hpp"

namespace epgn {

using Buffer = Storage;
using BufferPtr = std::shared_ptr<const Buffer>;

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
  out << ']';
  return out.str();
}

Tensor::Tensor() : data_(std::make_shared<const Buffer>(Buffer{0.0})) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, Storage values)
    : data_(std::make_shared<const Buffer>(std::move(values))), shape_(std::move(shape)) {
  if (shape_.size() > 2) throw Error(ErrorKind::Dimension, "rank above 2 is not supported");
  if (shape_size(shape_) != data_->size()) {
    throw Error(ErrorKind::Dimension, "shape " + shape_string(shape_) + " holds " +
                                          std::to_string(shape_size(shape_)) + " values, got " +
                                          std::to_string(data_->size()));
  }
}

Tensor::Tensor(BufferPtr data, Shape shape, Tape* tape, int node)
    : data_(std::move(data)), shape_(std::move(shape)), tape_(tape), node_(node) {}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, Buffer(1, value)); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  Buffer values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw Error(ErrorKind::Dimension, "ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), Buffer(n, value));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw Error(ErrorKind::Dimension, "rows() needs a matrix, got " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw Error(ErrorKind::Dimension, "cols() needs a matrix, got " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (size() != 1) throw Error(ErrorKind::Contract, "item() on tensor of shape " + shape_string(shape_));
  return (*data_)[0];
}

Tensor Tensor::detach() const { return Tensor(data_, shape_, nullptr, -1); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.values();
  const auto y = b.values();
  return std::equal(x.begin(), x.end(), y.begin(), y.end(), [](double p, double q) {
    return std::memcmp(&p, &q, sizeof(double)) == 0;
  });
}

Tensor Tape::leaf(const Tensor& value) {
  TapeNode node;
  node.op = OpKind::Leaf;
  node.shape = value.shape();
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  return Tensor(value.data_, value.shape(), this, index);
}

Tensor Tape::record(TapeNode node, BufferPtr value, Shape shape, bool save_output) {
  for (int p : node.parents) {
    if (p >= static_cast<int>(nodes_.size())) {
      throw Error(ErrorKind::Provenance, "parent recorded after child");
    }
  }
  node.shape = shape;
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back(std::move(node));
  Tensor out(std::move(value), std::move(shape), this, index);
  if (save_output) nodes_.back().saved.push_back(out);
  return out;
}

namespace {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Affine: return "affine";
    case OpKind::Relu: return "relu";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::SafeInv: return "safe_inv";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::Square: return "square";
    case OpKind::SumAll: return "sum";
    case OpKind::SumRows: return "sum_rows";
    case OpKind::SumCols: return "sum_cols";
    case OpKind::BroadcastScalar: return "broadcast_scalar";
    case OpKind::BroadcastRows: return "broadcast_rows";
    case OpKind::BroadcastCols: return "broadcast_cols";
    case OpKind::LogSumExpCols: return "logsumexp";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::PadCols: return "pad_cols";
    case OpKind::Transpose: return "transpose";
    case OpKind::GradFlip: return "grad_flip";
    case OpKind::AddBias: return "add_bias";
  }
  return "?";
}

// Finds the tape shared by the tracked inputs, if any.
Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else if (tape != t->tape()) {
      throw Error(ErrorKind::Provenance, "operands recorded on different tapes");
    }
  }
  return tape;
}

void check_finite(OpKind op, const Buffer& values) {
  if (!kernels::active().all_finite(values.size(), values.data())) {
    throw Error(ErrorKind::Numeric, std::string("non-finite result in ") + op_name(op));
  }
}

// Wraps a computed value, recording a node when any input is tracked on a
// recording tape.
Tensor finish(OpKind op, std::initializer_list<const Tensor*> inputs, Buffer value, Shape shape,
              TapeNode node = {}, bool save_output = false) {
  check_finite(op, value);
  Tape* tape = common_tape(inputs);
  if (tape == nullptr || !tape->recording()) return Tensor(std::move(shape), std::move(value));
  auto data = std::make_shared<const Buffer>(std::move(value));
  node.op = op;
  node.parents.clear();
  for (const Tensor* t : inputs) node.parents.push_back(t->tracked() ? t->node() : -1);
  return tape->record(std::move(node), std::move(data), std::move(shape), save_output);
}

void require_matrix(const Tensor& x, const char* what) {
  if (x.rank() != 2) {
    throw Error(ErrorKind::Dimension,
                std::string(what) + " expects a matrix, got " + shape_string(x.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::Dimension, std::string(what) + ": shape " + shape_string(a.shape()) +
                                          " vs " + shape_string(b.shape()));
  }
}

Buffer transposed(const double* x, std::size_t rows, std::size_t cols) {
  Buffer out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  }
  return out;
}

template <class Fn>
Buffer map_values(const Tensor& x, Fn fn) {
  Buffer out(x.size());
  const double* in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return out;
}

Tensor mask_from(const Tensor& x, double threshold) {
  return Tensor(x.shape(), map_values(x, [threshold](double v) { return v > threshold ? 1.0 : 0.0; }));
}

}  // namespace

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = transpose_a ? a.cols() : a.rows();
  const std::size_t k = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t m = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    throw Error(ErrorKind::Dimension, "matmul inner dimensions " + shape_string(a.shape()) +
                                          (transpose_a ? "^T" : "") + " x " +
                                          shape_string(b.shape()) + (transpose_b ? "^T" : ""));
  }
  Buffer a_tmp;
  const double* pa = a.data();
  if (transpose_a) {
    a_tmp = transposed(a.data(), a.rows(), a.cols());
    pa = a_tmp.data();
  }
  Buffer out(n * m);
  const auto& kt = kernels::active();
  Buffer b_tmp;
  if (m >= 8) {
    const double* pb = b.data();
    if (transpose_b) {
      b_tmp = transposed(b.data(), b.rows(), b.cols());
      pb = b_tmp.data();
    }
    kt.gemm_nn(n, k, m, pa, pb, out.data());
  } else {
    const double* pb = b.data();
    if (!transpose_b) {
      b_tmp = transposed(b.data(), b.rows(), b.cols());
      pb = b_tmp.data();
    }
    kt.gemm_nt(n, k, m, pa, pb, out.data());
  }
  TapeNode node;
  node.saved = {a, b};
  node.flag0 = transpose_a;
  node.flag1 = transpose_b;
  return finish(OpKind::MatMul, {&a, &b}, std::move(out), {n, m}, std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.size());
  kernels::active().add(out.size(), a.data(), b.data(), out.data());
  return finish(OpKind::Add, {&a, &b}, std::move(out), a.shape());
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.size());
  kernels::active().sub(out.size(), a.data(), b.data(), out.data());
  return finish(OpKind::Sub, {&a, &b}, std::move(out), a.shape());
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.size());
  kernels::active().mul(out.size(), a.data(), b.data(), out.data());
  TapeNode node;
  node.saved = {a, b};
  return finish(OpKind::Mul, {&a, &b}, std::move(out), a.shape(), std::move(node));
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Buffer out(x.size());
  kernels::active().affine(out.size(), x.data(), scale, shift, out.data());
  TapeNode node;
  node.scalar0 = scale;
  node.scalar1 = shift;
  return finish(OpKind::Affine, {&x}, std::move(out), x.shape(), std::move(node));
}

Tensor relu(const Tensor& x) {
  Buffer out(x.size());
  kernels::active().relu(out.size(), x.data(), out.data());
  TapeNode node;
  if (x.tracked()) node.saved = {mask_from(x, 0.0)};
  return finish(OpKind::Relu, {&x}, std::move(out), x.shape(), std::move(node));
}

Tensor tanh(const Tensor& x) {
  Buffer out = map_values(x, [](double v) { return std::tanh(v); });
  return finish(OpKind::Tanh, {&x}, std::move(out), x.shape(), {}, true);
}

Tensor exp(const Tensor& x) {
  Buffer out = map_values(x, [](double v) { return std::exp(v); });
  return finish(OpKind::Exp, {&x}, std::move(out), x.shape(), {}, true);
}

Tensor log(const Tensor& x) {
  Buffer out = map_values(x, [](double v) { return std::log(v); });
  TapeNode node;
  node.saved = {x};
  return finish(OpKind::Log, {&x}, std::move(out), x.shape(), std::move(node));
}

Tensor sqrt(const Tensor& x) {
  Buffer out = map_values(x, [](double v) { return std::sqrt(v); });
  return finish(OpKind::Sqrt, {&x}, std::move(out), x.shape(), {}, true);
}

Tensor safe_inv(const Tensor& x) {
  Buffer out = map_values(x, [](double v) { return v != 0.0 ? 1.0 / v : 0.0; });
  return finish(OpKind::SafeInv, {&x}, std::move(out), x.shape(), {}, true);
}

Tensor clamp_min(const Tensor& x, double floor) {
  Buffer out = map_values(x, [floor](double v) { return v > floor ? v : floor; });
  TapeNode node;
  if (x.tracked()) node.saved = {mask_from(x, floor)};
  return finish(OpKind::ClampMin, {&x}, std::move(out), x.shape(), std::move(node));
}

Tensor square(const Tensor& x) {
  Buffer out(x.size());
  kernels::active().mul(out.size(), x.data(), x.data(), out.data());
  TapeNode node;
  node.saved = {x};
  return finish(OpKind::Square, {&x}, std::move(out), x.shape(), std::move(node));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  TapeNode node;
  node.input_shape = x.shape();
  return finish(OpKind::SumAll, {&x}, Buffer{s}, {}, std::move(node));
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw Error(ErrorKind::Dimension, "mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_rows(const Tensor& x) {
  require_matrix(x, "sum_rows");
  const std::size_t n = x.rows(), m = x.cols();
  Buffer out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::active().add(m, out.data(), x.data() + i * m, out.data());
  }
  TapeNode node;
  node.index0 = n;
  return finish(OpKind::SumRows, {&x}, std::move(out), {m}, std::move(node));
}

Tensor sum_cols(const Tensor& x) {
  require_matrix(x, "sum_cols");
  const std::size_t n = x.rows(), m = x.cols();
  Buffer out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += x.data()[i * m + j];
    out[i] = s;
  }
  TapeNode node;
  node.index0 = m;
  return finish(OpKind::SumCols, {&x}, std::move(out), {n}, std::move(node));
}

Tensor broadcast_scalar(const Tensor& s, const Shape& shape) {
  if (s.size() != 1) throw Error(ErrorKind::Dimension, "broadcast_scalar of non-scalar");
  return finish(OpKind::BroadcastScalar, {&s}, Buffer(shape_size(shape), s.data()[0]), shape);
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  if (v.rank() != 1) throw Error(ErrorKind::Dimension, "broadcast_rows expects a vector");
  const std::size_t m = v.size();
  Buffer out(rows * m);
  for (std::size_t i = 0; i < rows; ++i) std::copy(v.data(), v.data() + m, out.begin() + i * m);
  return finish(OpKind::BroadcastRows, {&v}, std::move(out), {rows, m});
}

Tensor broadcast_cols(const Tensor& v, std::size_t cols) {
  if (v.rank() != 1) throw Error(ErrorKind::Dimension, "broadcast_cols expects a vector");
  const std::size_t n = v.size();
  Buffer out(n * cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(out.begin() + i * cols, out.begin() + (i + 1) * cols, v.data()[i]);
  }
  return finish(OpKind::BroadcastCols, {&v}, std::move(out), {n, cols});
}

Tensor logsumexp_cols(const Tensor& x) {
  require_matrix(x, "logsumexp");
  const std::size_t n = x.rows(), m = x.cols();
  if (m == 0) throw Error(ErrorKind::Dimension, "logsumexp over an empty axis");
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = x.data() + i * m;
    const double top = *std::max_element(row, row + m);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(row[j] - top);
    out[i] = top + std::log(s);
  }
  TapeNode node;
  node.saved = {x};
  return finish(OpKind::LogSumExpCols, {&x}, std::move(out), {n}, std::move(node), true);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::Batch, "concat_cols row counts " + std::to_string(a.rows()) + " vs " +
                                      std::to_string(b.rows()));
  }
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Buffer out(n * (ca + cb));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(a.data() + i * ca, a.data() + (i + 1) * ca, out.begin() + i * (ca + cb));
    std::copy(b.data() + i * cb, b.data() + (i + 1) * cb, out.begin() + i * (ca + cb) + ca);
  }
  TapeNode node;
  node.index0 = ca;
  node.index1 = cb;
  return finish(OpKind::ConcatCols, {&a, &b}, std::move(out), {n, ca + cb}, std::move(node));
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t n = x.rows(), m = x.cols();
  if (begin + count > m) throw Error(ErrorKind::Dimension, "slice_cols out of range");
  Buffer out(n * count);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(x.data() + i * m + begin, x.data() + i * m + begin + count, out.begin() + i * count);
  }
  TapeNode node;
  node.index0 = begin;
  node.index1 = m;
  return finish(OpKind::SliceCols, {&x}, std::move(out), {n, count}, std::move(node));
}

Tensor pad_cols(const Tensor& x, std::size_t offset, std::size_t total) {
  require_matrix(x, "pad_cols");
  const std::size_t n = x.rows(), m = x.cols();
  if (offset + m > total) throw Error(ErrorKind::Dimension, "pad_cols out of range");
  Buffer out(n * total, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(x.data() + i * m, x.data() + (i + 1) * m, out.begin() + i * total + offset);
  }
  TapeNode node;
  node.index0 = offset;
  node.index1 = m;
  return finish(OpKind::PadCols, {&x}, std::move(out), {n, total}, std::move(node));
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  return finish(OpKind::Transpose, {&x}, transposed(x.data(), x.rows(), x.cols()),
                {x.cols(), x.rows()});
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  if (bias.rank() != 1 || bias.size() != x.cols()) {
    throw Error(ErrorKind::Dimension,
                "bias " + shape_string(bias.shape()) + " for input " + shape_string(x.shape()));
  }
  Buffer out(x.size());
  kernels::active().add_row(x.rows(), x.cols(), x.data(), bias.data(), out.data());
  return finish(OpKind::AddBias, {&x, &bias}, std::move(out), x.shape());
}

Tensor sq_norm_cols(const Tensor& x) { return sum_cols(square(x)); }

Tensor dropout(const Tensor& x, double rate, RngStream& rng, bool train) {
  if (!train || rate <= 0.0) return x;
  if (rate >= 1.0) throw Error(ErrorKind::Contract, "dropout rate must be below 1");
  const double keep_scale = 1.0 / (1.0 - rate);
  Buffer mask(x.size());
  rng.fill_uniform(mask);
  for (auto& v : mask) v = v < rate ? 0.0 : keep_scale;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

Tensor grad_flip(const Tensor& x) {
  return finish(OpKind::GradFlip, {&x}, Buffer(x.values().begin(), x.values().end()), x.shape());
}

}  // namespace ops

std::vector<Tensor> Tape::node_vjp(const TapeNode& node, const Tensor& g,
                                   const std::vector<char>& need) {
  using namespace ops;
  const auto& s = node.saved;
  switch (node.op) {
    case OpKind::Leaf:
      return {};
    case OpKind::MatMul: {
      const Tensor& a = s[0];
      const Tensor& b = s[1];
      const bool ta = node.flag0, tb = node.flag1;
      Tensor da, db;
      if (need[0]) {
        da = !ta ? matmul(g, b, false, !tb) : (!tb ? matmul(b, g, false, true) : matmul(b, g, true, true));
      }
      if (need[1]) {
        db = !tb ? matmul(a, g, !ta, false) : (!ta ? matmul(g, a, true, false) : matmul(g, a, true, true));
      }
      return {da, db};
    }
    case OpKind::Add:
      return {g, g};
    case OpKind::AddBias:
      return {g, need[1] ? sum_rows(g) : Tensor()};
    case OpKind::Sub:
      return {g, scale(g, -1.0)};
    case OpKind::Mul:
      return {need[0] ? mul(g, s[1]) : Tensor(), need[1] ? mul(g, s[0]) : Tensor()};
    case OpKind::Affine:
      return {scale(g, node.scalar0)};
    case OpKind::Relu:
    case OpKind::ClampMin:
      return {mul(g, s[0])};
    case OpKind::Tanh:
      return {mul(g, affine(square(s[0]), -1.0, 1.0))};
    case OpKind::Exp:
      return {mul(g, s[0])};
    case OpKind::Log:
      return {mul(g, safe_inv(s[0]))};
    case OpKind::Sqrt:
      return {mul(g, scale(safe_inv(s[0]), 0.5))};
    case OpKind::SafeInv:
      return {mul(g, scale(square(s[0]), -1.0))};
    case OpKind::Square:
      return {mul(g, scale(s[0], 2.0))};
    case OpKind::SumAll:
      return {broadcast_scalar(g, node.input_shape)};
    case OpKind::SumRows:
      return {broadcast_rows(g, node.index0)};
    case OpKind::SumCols:
      return {broadcast_cols(g, node.index0)};
    case OpKind::BroadcastScalar:
      return {sum(g)};
    case OpKind::BroadcastRows:
      return {sum_rows(g)};
    case OpKind::BroadcastCols:
      return {sum_cols(g)};
    case OpKind::LogSumExpCols: {
      const Tensor& x = s[0];
      const std::size_t m = x.cols();
      const Tensor softmax = exp(sub(x, broadcast_cols(s[1], m)));  // s[1] is the output
      return {mul(broadcast_cols(g, m), softmax)};
    }
    case OpKind::ConcatCols:
      return {slice_cols(g, 0, node.index0), slice_cols(g, node.index0, node.index1)};
    case OpKind::SliceCols:
      return {pad_cols(g, node.index0, node.index1)};
    case OpKind::PadCols:
      return {slice_cols(g, node.index0, node.index1)};
    case OpKind::Transpose:
      return {transpose(g)};
    case OpKind::GradFlip:
      return {scale(g, -1.0)};
  }
  throw Error(ErrorKind::Contract, "unknown op");
}

std::vector<Tensor> Tape::backward(const Tensor& output, std::span<const Tensor> wrt,
                                   bool create_graph) {
  if (output.rank() != 0) {
    throw Error(ErrorKind::Contract,
                "backward needs a rank-0 output, got " + shape_string(output.shape()));
  }
  if (!output.tracked() || output.tape() != this) {
    throw Error(ErrorKind::Provenance, "backward output was not recorded on this tape");
  }
  for (const Tensor& w : wrt) {
    if (!w.tracked() || w.tape() != this) {
      throw Error(ErrorKind::Provenance, "gradient requested for a tensor not on this tape");
    }
  }
  const auto root = static_cast<std::size_t>(output.node());
  std::vector<char> is_target(root + 1, 0);
  for (const Tensor& w : wrt) {
    if (static_cast<std::size_t>(w.node()) <= root) is_target[w.node()] = 1;
  }
  // A node is relevant if some requested tensor lies among its ancestors.
  std::vector<char> relevant(root + 1, 0);
  for (std::size_t i = 0; i <= root; ++i) {
    relevant[i] = is_target[i];
    if (!relevant[i]) {
      for (int p : nodes_[i].parents) {
        if (p >= 0 && relevant[p]) {
          relevant[i] = 1;
          break;
        }
      }
    }
  }

  std::vector<std::optional<Tensor>> grads(root + 1);
  grads[root] = Tensor::scalar(1.0);
  std::optional<RecordingPause> pause;
  if (!create_graph) pause.emplace(*this);

  for (std::size_t i = root + 1; i-- > 0;) {
    if (!grads[i] || !relevant[i]) continue;
    if (nodes_[i].op == OpKind::Leaf) continue;
    const TapeNode node = nodes_[i];  // copy: recording may grow nodes_
    std::vector<char> need(node.parents.size(), 0);
    bool any = false;
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const int p = node.parents[k];
      need[k] = p >= 0 && relevant[p];
      any = any || need[k];
    }
    if (any) {
      std::vector<Tensor> parent_grads = node_vjp(node, *grads[i], need);
      for (std::size_t k = 0; k < node.parents.size(); ++k) {
        const int p = node.parents[k];
        if (p < 0 || !relevant[p]) continue;
        if (grads[p]) {
          grads[p] = ops::add(*grads[p], parent_grads[k]);
        } else {
          grads[p] = std::move(parent_grads[k]);
        }
      }
    }
    if (!is_target[i]) grads[i].reset();
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    const auto idx = static_cast<std::size_t>(w.node());
    if (idx <= root && grads[idx]) {
      result.push_back(*grads[idx]);
    } else {
      result.push_back(Tensor::zeros(w.shape()));
    }
  }
  return result;
}

}  // namespace epgn
