#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace epgn {

class Tape;

using Shape = std::vector<std::size_t>;

namespace detail {
// Leaves value-initialized elements uninitialized; every op writes its whole
// output, so zero-filling fresh buffers is wasted work.
template <class T>
struct NoInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = NoInitAllocator<U>;
  };
  NoInitAllocator() = default;
  template <class U>
  NoInitAllocator(const NoInitAllocator<U>&) noexcept {}
  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};
}  // namespace detail

using Storage = std::vector<double, detail::NoInitAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Immutable dense array of doubles (rank 0, 1 or 2, row-major). A tensor
// produced while a Tape is recording carries the index of the node that
// produced it; constants carry no node.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, Storage values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double item() const;
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool tracked() const { return tape_ != nullptr && node_ >= 0; }

  // Same values, no tape provenance.
  Tensor detach() const;

 private:
  friend class Tape;
  Tensor(std::shared_ptr<const Storage> data, Shape shape, Tape* tape, int node);

  std::shared_ptr<const Storage> data_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

bool bitwise_equal(const Tensor& a, const Tensor& b);

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Affine,
  Relu,
  Tanh,
  Exp,
  Log,
  Sqrt,
  SafeInv,
  ClampMin,
  Square,
  SumAll,
  SumRows,  // reduce axis 0: [n,m] -> [m]
  SumCols,  // reduce axis 1: [n,m] -> [n]
  BroadcastScalar,
  BroadcastRows,  // [m] -> [n,m]
  BroadcastCols,  // [n] -> [n,m]
  LogSumExpCols,  // [n,m] -> [n]
  ConcatCols,
  SliceCols,
  PadCols,
  Transpose,
  GradFlip,
  AddBias,  // [n,m] + [m] per row
};

struct TapeNode {
  OpKind op = OpKind::Leaf;
  std::vector<int> parents;
  // Operands and outputs the backward rule needs.
  std::vector<Tensor> saved;
  double scalar0 = 0.0;
  double scalar1 = 0.0;
  std::size_t index0 = 0;
  std::size_t index1 = 0;
  bool flag0 = false;
  bool flag1 = false;
  Shape input_shape;
  Shape shape;
};

// Append-only record of differentiable operations. Not copyable: tensors
// refer to their tape by address.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a value as a differentiable input.
  Tensor leaf(const Tensor& value);

  // Gradients of a rank-0 tensor with respect to each requested tensor. With
  // create_graph the gradient computation is itself recorded, so the results
  // can be differentiated again. Tensors that do not influence the output get
  // zero gradients.
  std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> wrt,
                               bool create_graph = false);

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }
  const TapeNode& node(std::size_t i) const { return nodes_.at(i); }

  // Internal: used by operation implementations.
  Tensor record(TapeNode node, std::shared_ptr<const Storage> value, Shape shape,
                bool save_output = false);

 private:
  friend class RecordingPause;
  std::vector<Tensor> node_vjp(const TapeNode& node, const Tensor& grad,
                               const std::vector<char>& need);

  std::vector<TapeNode> nodes_;
  bool recording_ = true;
};

// Suspends recording on a tape for the lifetime of the guard.
class RecordingPause {
 public:
  explicit RecordingPause(Tape& tape) : tape_(tape), saved_(tape.recording_) {
    tape_.recording_ = false;
  }
  ~RecordingPause() { tape_.recording_ = saved_; }
  RecordingPause(const RecordingPause&) = delete;
  RecordingPause& operator=(const RecordingPause&) = delete;

 private:
  Tape& tape_;
  bool saved_;
};

class RngStream;

// Differentiable operations. Shapes are checked; mismatches raise a
// dimension error and non-finite results raise a numeric error.
namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// scale * x + shift
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
inline Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// Derivative at 0 is taken as 0.
Tensor sqrt(const Tensor& x);
// 1/x where x != 0, else 0.
Tensor safe_inv(const Tensor& x);
Tensor clamp_min(const Tensor& x, double floor);
Tensor square(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_rows(const Tensor& x);
Tensor sum_cols(const Tensor& x);
Tensor broadcast_scalar(const Tensor& s, const Shape& shape);
Tensor broadcast_rows(const Tensor& v, std::size_t rows);
Tensor broadcast_cols(const Tensor& v, std::size_t cols);
// Row-wise log(sum(exp(x))) computed around the row maximum.
Tensor logsumexp_cols(const Tensor& x);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor pad_cols(const Tensor& x, std::size_t offset, std::size_t total);
Tensor transpose(const Tensor& x);
// x + broadcast bias over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Row-wise squared L2 norm: [n,m] -> [n].
Tensor sq_norm_cols(const Tensor& x);
// Inverted dropout. In eval mode (train == false) this is the identity and
// consumes no random numbers.
Tensor dropout(const Tensor& x, double rate, RngStream& rng, bool train);
// Identity whose backward negates the incoming gradient (fault injection).
Tensor grad_flip(const Tensor& x);

}  // namespace ops

}  // namespace epgn
