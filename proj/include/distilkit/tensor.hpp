#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "distilkit/error.hpp"

namespace distilkit {

using Scalar = double;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

enum class OpKind {
  Add,
  Sub,
  Mul,
  AddRow,
  AddScalar,
  Scale,
  ScaleBy,
  Recip,
  Sqrt,
  LogFloor,
  MatMul,
  Transpose,
  Softmax,
  LogSoftmax,
  LayerNorm,
  Gelu,
  Sum,
  Mean,
  SelectRows,
  SelectCols,
  ConcatCols,
};

const char* op_name(OpKind kind);

struct TensorNode {
  Matrix value;
  Matrix grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
};

class Tape;

// Value-semantic handle to a node. Copies share the node, so parameters can
// live across many tapes while gradients accumulate in one place.
class Tensor {
public:
  Tensor() = default;
  static Tensor from_matrix(Matrix m, bool requires_grad = false);
  static Tensor zeros(Index rows, Index cols, bool requires_grad = false);
  static Tensor constant(Index rows, Index cols, Scalar v);
  static Tensor scalar(Scalar v);

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  Matrix& value() { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  bool has_grad() const { return node_->grad.size() > 0; }
  const Matrix& grad() const { return node_->grad; }
  void zero_grad();

  // New leaf holding a copy of the value, cut off from any graph.
  Tensor detach() const;

  // Convenience: backward through the currently active tape.
  void backward() const;

  TensorNode* node() const { return node_.get(); }
  std::shared_ptr<TensorNode> shared_node() const { return node_; }

private:
  std::shared_ptr<TensorNode> node_;
};

// Records one executed op: enough to rerun its forward (replay) and to push
// adjoints to its inputs (backward).
struct OpRecord {
  OpKind kind;
  std::vector<int> inputs;
  int output = -1;
  std::function<void(Tape&)> backward;
  std::function<Matrix()> replay;
};

// The computation record for one forward pass. Ops append themselves to the
// thread's current tape; record order is a topological order by construction.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  // Accumulates d loss / d leaf into every requires_grad node reachable from
  // `loss`. Repeated calls accumulate; zero_grad resets.
  void backward(const Tensor& loss);

  // Recomputes every recorded output from its stored inputs and compares
  // bit-for-bit. Detects nondeterministic ops.
  bool replay_check() const;

  std::size_t num_records() const { return records_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

  int ensure_id(const Tensor& t);
  int id_of(const TensorNode* n) const;  // -1 when not on this tape
  void push_record(OpRecord rec);

  // Adjoint accumulation, valid only inside backward().
  void adj_add(int id, const Matrix& delta);
  const Matrix& adj(int id) const { return adjoints_[id]; }
  bool adj_set(int id) const { return adjoints_[id].size() > 0; }

private:
  std::vector<std::shared_ptr<TensorNode>> nodes_;
  std::unordered_map<const TensorNode*, int> index_;
  std::vector<OpRecord> records_;
  std::vector<Matrix> adjoints_;
};

// RAII activation of a tape on this thread.
class TapeScope {
public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

private:
  Tape* prev_;
};

// Everything executed inside records nothing; outputs are plain constants.
class NoGradScope {
public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

private:
  Tape* prev_;
};

// ---- primitive ops ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor add_row(const Tensor& x, const Tensor& row);  // broadcast 1xN over rows
Tensor add_scalar(const Tensor& x, Scalar c);
Tensor scale(const Tensor& x, Scalar c);
Tensor scale_by(const Tensor& x, const Tensor& s);  // s is 1x1
Tensor recip(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor log_floor(const Tensor& x, Scalar floor_val);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps);
Tensor gelu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor select_rows(const Tensor& x, std::vector<Index> idx);
Tensor select_cols(const Tensor& x, std::vector<Index> idx);
Tensor concat_cols(const std::vector<Tensor>& parts);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, Scalar c) { return scale(a, c); }
inline Tensor operator*(Scalar c, const Tensor& a) { return scale(a, c); }

// Mean squared error over all entries, composed from primitives.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace distilkit
