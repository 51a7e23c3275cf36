#include "distilkit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <utility>

namespace distilkit {

namespace {

thread_local Tape* g_tape = nullptr;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (g_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void check_defined(const char* op, std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs)
    if (!t->defined()) throw DimensionMismatch(std::string(op) + ": undefined input tensor");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionMismatch(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

using RowArray = Eigen::Array<Scalar, 1, Eigen::Dynamic>;
using ColArray = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

// Forward kernels are shared between the initial execution and tape replay so
// both take the same code path and stay bit-identical.

Matrix softmax_fwd(const Matrix& x, int axis) {
  Matrix y(x.rows(), x.cols());
  if (axis == 1) {
    for (Index i = 0; i < x.rows(); ++i) {
      Scalar m = x.row(i).maxCoeff();
      RowArray e = (x.row(i).array() - m).exp();
      y.row(i) = (e / e.sum()).matrix();
    }
  } else {
    for (Index j = 0; j < x.cols(); ++j) {
      Scalar m = x.col(j).maxCoeff();
      ColArray e = (x.col(j).array() - m).exp();
      y.col(j) = (e / e.sum()).matrix();
    }
  }
  return y;
}

Matrix log_softmax_fwd(const Matrix& x, int axis) {
  Matrix y(x.rows(), x.cols());
  if (axis == 1) {
    for (Index i = 0; i < x.rows(); ++i) {
      Scalar m = x.row(i).maxCoeff();
      RowArray s = x.row(i).array() - m;
      y.row(i) = (s - std::log(s.exp().sum())).matrix();
    }
  } else {
    for (Index j = 0; j < x.cols(); ++j) {
      Scalar m = x.col(j).maxCoeff();
      ColArray s = x.col(j).array() - m;
      y.col(j) = (s - std::log(s.exp().sum())).matrix();
    }
  }
  return y;
}

struct LayerNormSaved {
  Matrix xhat;
  ColArray inv_std;  // per row
};

Matrix layer_norm_fwd(const Matrix& x, const Matrix& gamma, const Matrix& beta, Scalar eps,
                      LayerNormSaved* saved) {
  const Index d = x.cols();
  Matrix y(x.rows(), d);
  if (saved) {
    saved->xhat.resize(x.rows(), d);
    saved->inv_std.resize(x.rows());
  }
  for (Index i = 0; i < x.rows(); ++i) {
    Scalar mu = x.row(i).mean();
    RowArray centered = x.row(i).array() - mu;
    Scalar var = centered.square().sum() / static_cast<Scalar>(d);
    Scalar inv = 1.0 / std::sqrt(var + eps);
    RowArray xhat = centered * inv;
    y.row(i) = (xhat * gamma.row(0).array() + beta.row(0).array()).matrix();
    if (saved) {
      saved->xhat.row(i) = xhat.matrix();
      saved->inv_std(i) = inv;
    }
  }
  return y;
}

constexpr Scalar kGeluCoef = 0.044715;
constexpr Scalar kSqrt2OverPi = 0.7978845608028654;  // sqrt(2/pi)

// tanh approximation of GELU
Matrix gelu_fwd(const Matrix& x) {
  Eigen::ArrayXXd a = x.array();
  Eigen::ArrayXXd u = kSqrt2OverPi * (a + kGeluCoef * a.cube());
  return (0.5 * a * (1.0 + u.tanh())).matrix();
}

Matrix gelu_grad(const Matrix& x, const Matrix& dout) {
  Eigen::ArrayXXd a = x.array();
  Eigen::ArrayXXd u = kSqrt2OverPi * (a + kGeluCoef * a.cube());
  Eigen::ArrayXXd t = u.tanh();
  Eigen::ArrayXXd du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoef * a.square());
  Eigen::ArrayXXd dy = 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t.square()) * du;
  return (dout.array() * dy).matrix();
}

Matrix select_rows_fwd(const Matrix& x, const std::vector<Index>& idx) {
  Matrix y(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) y.row(static_cast<Index>(i)) = x.row(idx[i]);
  return y;
}

Matrix select_cols_fwd(const Matrix& x, const std::vector<Index>& idx) {
  Matrix y(x.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) y.col(static_cast<Index>(j)) = x.col(idx[j]);
  return y;
}

Matrix concat_cols_fwd(const std::vector<std::shared_ptr<TensorNode>>& parts) {
  Index cols = 0;
  for (const auto& p : parts) cols += p->value.cols();
  Matrix y(parts[0]->value.rows(), cols);
  Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p->value.cols()) = p->value;
    at += p->value.cols();
  }
  return y;
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::AddRow: return "add_row";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Scale: return "scale";
    case OpKind::ScaleBy: return "scale_by";
    case OpKind::Recip: return "recip";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::LogFloor: return "log_floor";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SelectRows: return "select_rows";
    case OpKind::SelectCols: return "select_cols";
    case OpKind::ConcatCols: return "concat_cols";
  }
  return "unknown";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from_matrix(Matrix m, bool requires_grad) {
  Tensor t;
  t.node_ = std::make_shared<TensorNode>();
  t.node_->value = std::move(m);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::zeros(Index rows, Index cols, bool requires_grad) {
  return from_matrix(Matrix::Zero(rows, cols), requires_grad);
}

Tensor Tensor::constant(Index rows, Index cols, Scalar v) {
  return from_matrix(Matrix::Constant(rows, cols, v));
}

Tensor Tensor::scalar(Scalar v) { return constant(1, 1, v); }

Scalar Tensor::item() const {
  if (size() != 1) throw NonScalarLoss("item() on tensor of size " + std::to_string(size()));
  return node_->value(0, 0);
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

Tensor Tensor::detach() const {
  return from_matrix(node_->value, false);
}

void Tensor::backward() const {
  if (g_tape == nullptr) throw DetachedGraph("no tape is active on this thread");
  g_tape->backward(*this);
}

// ---- Tape ------------------------------------------------------------------

Tape* Tape::current() { return g_tape; }

int Tape::ensure_id(const Tensor& t) {
  auto it = index_.find(t.node());
  if (it != index_.end()) return it->second;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(t.shared_node());
  index_.emplace(t.node(), id);
  return id;
}

int Tape::id_of(const TensorNode* n) const {
  auto it = index_.find(n);
  return it == index_.end() ? -1 : it->second;
}

void Tape::push_record(OpRecord rec) { records_.push_back(std::move(rec)); }

void Tape::adj_add(int id, const Matrix& delta) {
  Matrix& a = adjoints_[id];
  if (a.size() == 0)
    a = delta;
  else
    a += delta;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw DetachedGraph("loss tensor is undefined");
  if (loss.size() != 1)
    throw NonScalarLoss("backward needs a scalar, got " + std::to_string(loss.rows()) + "x" +
                        std::to_string(loss.cols()));
  int loss_id = id_of(loss.node());
  if (loss_id < 0) throw DetachedGraph("loss does not belong to this tape");

  adjoints_.assign(nodes_.size(), Matrix());
  adjoints_[loss_id] = Matrix::Ones(1, 1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (adj_set(it->output)) it->backward(*this);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    TensorNode& n = *nodes_[i];
    if (!n.requires_grad || adjoints_[i].size() == 0) continue;
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.grad += adjoints_[i];
  }
  adjoints_.clear();
}

bool Tape::replay_check() const {
  for (const OpRecord& rec : records_) {
    Matrix again = rec.replay();
    const Matrix& stored = nodes_[rec.output]->value;
    if (again.rows() != stored.rows() || again.cols() != stored.cols()) return false;
    if (stored.size() > 0 &&
        std::memcmp(again.data(), stored.data(), sizeof(Scalar) * stored.size()) != 0)
      return false;
  }
  return true;
}

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_tape) { g_tape = nullptr; }
NoGradScope::~NoGradScope() { g_tape = prev_; }

// ---- ops -------------------------------------------------------------------
//
// Each op computes its value, then (when recording) registers a record whose
// backward pushes adjoints to the inputs and whose replay reruns the forward
// kernel on the stored input values.

namespace {

struct OpBuilder {
  OpKind kind;
  std::vector<const Tensor*> inputs;
  Tensor out;
  std::vector<int> ids;
  int out_id = -1;
  bool live = false;
  Tape* tape = nullptr;

  OpBuilder(OpKind k, std::initializer_list<const Tensor*> ins, Matrix value) : kind(k) {
    inputs.assign(ins);
    out = Tensor::from_matrix(std::move(value));
    live = recording(ins);
    if (!live) return;
    tape = g_tape;
    out.set_requires_grad(true);
    for (const Tensor* t : inputs) ids.push_back(tape->ensure_id(*t));
    out_id = tape->ensure_id(out);
  }

  void commit(std::function<void(Tape&)> backward, std::function<Matrix()> replay) {
    if (!live) return;
    tape->push_record({kind, ids, out_id, std::move(backward), std::move(replay)});
  }
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined("add", {&a, &b});
  check_same_shape("add", a, b);
  OpBuilder op(OpKind::Add, {&a, &b}, a.value() + b.value());
  if (op.live) {
    auto an = a.shared_node(), bn = b.shared_node();
    int ia = op.ids[0], ib = op.ids[1], io = op.out_id;
    op.commit(
        [ia, ib, io](Tape& t) {
          t.adj_add(ia, t.adj(io));
          t.adj_add(ib, t.adj(io));
        },
        [an, bn]() -> Matrix { return an->value + bn->value; });
  }
  return op.out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined("sub", {&a, &b});
  check_same_shape("sub", a, b);
  OpBuilder op(OpKind::Sub, {&a, &b}, a.value() - b.value());
  if (op.live) {
    auto an = a.shared_node(), bn = b.shared_node();
    int ia = op.ids[0], ib = op.ids[1], io = op.out_id;
    op.commit(
        [ia, ib, io](Tape& t) {
          t.adj_add(ia, t.adj(io));
          t.adj_add(ib, -t.adj(io));
        },
        [an, bn]() -> Matrix { return an->value - bn->value; });
  }
  return op.out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined("mul", {&a, &b});
  check_same_shape("mul", a, b);
  OpBuilder op(OpKind::Mul, {&a, &b}, a.value().cwiseProduct(b.value()));
  if (op.live) {
    auto an = a.shared_node(), bn = b.shared_node();
    int ia = op.ids[0], ib = op.ids[1], io = op.out_id;
    op.commit(
        [ia, ib, io, an, bn](Tape& t) {
          t.adj_add(ia, t.adj(io).cwiseProduct(bn->value));
          t.adj_add(ib, t.adj(io).cwiseProduct(an->value));
        },
        [an, bn]() -> Matrix { return an->value.cwiseProduct(bn->value); });
  }
  return op.out;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  check_defined("add_row", {&x, &row});
  if (row.rows() != 1 || row.cols() != x.cols())
    throw DimensionMismatch("add_row: row must be 1x" + std::to_string(x.cols()));
  Matrix out = x.value();
  out.rowwise() += row.value().row(0);
  OpBuilder op(OpKind::AddRow, {&x, &row}, std::move(out));
  if (op.live) {
    auto xn = x.shared_node(), rn = row.shared_node();
    int ix = op.ids[0], ir = op.ids[1], io = op.out_id;
    op.commit(
        [ix, ir, io](Tape& t) {
          t.adj_add(ix, t.adj(io));
          t.adj_add(ir, t.adj(io).colwise().sum());
        },
        [xn, rn]() -> Matrix {
          Matrix y = xn->value;
          y.rowwise() += rn->value.row(0);
          return y;
        });
  }
  return op.out;
}

Tensor add_scalar(const Tensor& x, Scalar c) {
  check_defined("add_scalar", {&x});
  OpBuilder op(OpKind::AddScalar, {&x}, (x.value().array() + c).matrix());
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit([ix, io](Tape& t) { t.adj_add(ix, t.adj(io)); },
              [xn, c]() -> Matrix { return (xn->value.array() + c).matrix(); });
  }
  return op.out;
}

Tensor scale(const Tensor& x, Scalar c) {
  check_defined("scale", {&x});
  OpBuilder op(OpKind::Scale, {&x}, x.value() * c);
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit([ix, io, c](Tape& t) { t.adj_add(ix, t.adj(io) * c); },
              [xn, c]() -> Matrix { return xn->value * c; });
  }
  return op.out;
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  check_defined("scale_by", {&x, &s});
  if (s.size() != 1) throw DimensionMismatch("scale_by: scale factor must be 1x1");
  OpBuilder op(OpKind::ScaleBy, {&x, &s}, x.value() * s.value()(0, 0));
  if (op.live) {
    auto xn = x.shared_node(), sn = s.shared_node();
    int ix = op.ids[0], is = op.ids[1], io = op.out_id;
    op.commit(
        [ix, is, io, xn, sn](Tape& t) {
          t.adj_add(ix, t.adj(io) * sn->value(0, 0));
          Matrix ds(1, 1);
          ds(0, 0) = t.adj(io).cwiseProduct(xn->value).sum();
          t.adj_add(is, ds);
        },
        [xn, sn]() -> Matrix { return xn->value * sn->value(0, 0); });
  }
  return op.out;
}

Tensor recip(const Tensor& x) {
  check_defined("recip", {&x});
  OpBuilder op(OpKind::Recip, {&x}, x.value().cwiseInverse());
  if (op.live) {
    auto xn = x.shared_node();
    auto out_n = op.out.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, out_n](Tape& t) {
          t.adj_add(ix, (-t.adj(io).array() * out_n->value.array().square()).matrix());
        },
        [xn]() -> Matrix { return xn->value.cwiseInverse(); });
  }
  return op.out;
}

Tensor sqrt(const Tensor& x) {
  check_defined("sqrt", {&x});
  OpBuilder op(OpKind::Sqrt, {&x}, x.value().cwiseSqrt());
  if (op.live) {
    auto xn = x.shared_node();
    auto out_n = op.out.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, out_n](Tape& t) {
          t.adj_add(ix, (t.adj(io).array() * 0.5 / out_n->value.array()).matrix());
        },
        [xn]() -> Matrix { return xn->value.cwiseSqrt(); });
  }
  return op.out;
}

Tensor log_floor(const Tensor& x, Scalar floor_val) {
  check_defined("log_floor", {&x});
  Matrix out = x.value().array().max(floor_val).log().matrix();
  OpBuilder op(OpKind::LogFloor, {&x}, std::move(out));
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, xn, floor_val](Tape& t) {
          // gradient is 1/x above the floor, 0 below it
          Eigen::ArrayXXd mask = (xn->value.array() >= floor_val).cast<Scalar>();
          t.adj_add(ix, (t.adj(io).array() * mask / xn->value.array().max(floor_val)).matrix());
        },
        [xn, floor_val]() -> Matrix { return xn->value.array().max(floor_val).log().matrix(); });
  }
  return op.out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", {&a, &b});
  if (a.cols() != b.rows())
    throw DimensionMismatch("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                            std::to_string(b.rows()));
  OpBuilder op(OpKind::MatMul, {&a, &b}, a.value() * b.value());
  if (op.live) {
    auto an = a.shared_node(), bn = b.shared_node();
    int ia = op.ids[0], ib = op.ids[1], io = op.out_id;
    op.commit(
        [ia, ib, io, an, bn](Tape& t) {
          t.adj_add(ia, t.adj(io) * bn->value.transpose());
          t.adj_add(ib, an->value.transpose() * t.adj(io));
        },
        [an, bn]() -> Matrix { return an->value * bn->value; });
  }
  return op.out;
}

Tensor transpose(const Tensor& x) {
  check_defined("transpose", {&x});
  OpBuilder op(OpKind::Transpose, {&x}, x.value().transpose());
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit([ix, io](Tape& t) { t.adj_add(ix, t.adj(io).transpose()); },
              [xn]() -> Matrix { return xn->value.transpose(); });
  }
  return op.out;
}

Tensor softmax(const Tensor& x, int axis) {
  check_defined("softmax", {&x});
  if (axis != 0 && axis != 1) throw InvalidAxis("softmax: axis " + std::to_string(axis));
  OpBuilder op(OpKind::Softmax, {&x}, softmax_fwd(x.value(), axis));
  if (op.live) {
    auto xn = x.shared_node();
    auto out_n = op.out.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, out_n, axis](Tape& t) {
          const Matrix& y = out_n->value;
          const Matrix& d = t.adj(io);
          Matrix dx(y.rows(), y.cols());
          if (axis == 1) {
            for (Index i = 0; i < y.rows(); ++i) {
              Scalar dot = d.row(i).dot(y.row(i));
              dx.row(i) = (y.row(i).array() * (d.row(i).array() - dot)).matrix();
            }
          } else {
            for (Index j = 0; j < y.cols(); ++j) {
              Scalar dot = d.col(j).dot(y.col(j));
              dx.col(j) = (y.col(j).array() * (d.col(j).array() - dot)).matrix();
            }
          }
          t.adj_add(ix, dx);
        },
        [xn, axis]() -> Matrix { return softmax_fwd(xn->value, axis); });
  }
  return op.out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  check_defined("log_softmax", {&x});
  if (axis != 0 && axis != 1) throw InvalidAxis("log_softmax: axis " + std::to_string(axis));
  OpBuilder op(OpKind::LogSoftmax, {&x}, log_softmax_fwd(x.value(), axis));
  if (op.live) {
    auto xn = x.shared_node();
    Matrix probs = softmax_fwd(x.value(), axis);
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, probs, axis](Tape& t) {
          const Matrix& d = t.adj(io);
          Matrix dx(d.rows(), d.cols());
          if (axis == 1) {
            for (Index i = 0; i < d.rows(); ++i)
              dx.row(i) = d.row(i) - probs.row(i) * d.row(i).sum();
          } else {
            for (Index j = 0; j < d.cols(); ++j)
              dx.col(j) = d.col(j) - probs.col(j) * d.col(j).sum();
          }
          t.adj_add(ix, dx);
        },
        [xn, axis]() -> Matrix { return log_softmax_fwd(xn->value, axis); });
  }
  return op.out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  check_defined("layer_norm", {&x, &gamma, &beta});
  if (eps <= 0) throw DimensionMismatch("layer_norm: eps must be positive");
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw DimensionMismatch("layer_norm: gamma/beta must be 1x" + std::to_string(x.cols()));
  auto saved = std::make_shared<LayerNormSaved>();
  OpBuilder op(OpKind::LayerNorm, {&x, &gamma, &beta},
               layer_norm_fwd(x.value(), gamma.value(), beta.value(), eps, saved.get()));
  if (op.live) {
    auto xn = x.shared_node(), gn = gamma.shared_node(), bn = beta.shared_node();
    int ix = op.ids[0], ig = op.ids[1], ib = op.ids[2], io = op.out_id;
    op.commit(
        [ix, ig, ib, io, gn, saved](Tape& t) {
          const Matrix& d = t.adj(io);
          const Matrix& xhat = saved->xhat;
          const Index rows = d.rows(), cols = d.cols();
          Matrix dx(rows, cols);
          for (Index i = 0; i < rows; ++i) {
            RowArray g = d.row(i).array() * gn->value.row(0).array();
            RowArray xh = xhat.row(i).array();
            Scalar mg = g.mean();
            Scalar mgx = (g * xh).mean();
            dx.row(i) = (saved->inv_std(i) * (g - mg - xh * mgx)).matrix();
          }
          t.adj_add(ix, dx);
          t.adj_add(ig, d.cwiseProduct(xhat).colwise().sum());
          t.adj_add(ib, d.colwise().sum());
        },
        [xn, gn, bn, eps]() -> Matrix {
          return layer_norm_fwd(xn->value, gn->value, bn->value, eps, nullptr);
        });
  }
  return op.out;
}

Tensor gelu(const Tensor& x) {
  check_defined("gelu", {&x});
  OpBuilder op(OpKind::Gelu, {&x}, gelu_fwd(x.value()));
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit([ix, io, xn](Tape& t) { t.adj_add(ix, gelu_grad(xn->value, t.adj(io))); },
              [xn]() -> Matrix { return gelu_fwd(xn->value); });
  }
  return op.out;
}

Tensor sum(const Tensor& x) {
  check_defined("sum", {&x});
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  OpBuilder op(OpKind::Sum, {&x}, std::move(out));
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, xn](Tape& t) {
          t.adj_add(ix, Matrix::Constant(xn->value.rows(), xn->value.cols(), t.adj(io)(0, 0)));
        },
        [xn]() -> Matrix {
          Matrix y(1, 1);
          y(0, 0) = xn->value.sum();
          return y;
        });
  }
  return op.out;
}

Tensor mean(const Tensor& x) {
  check_defined("mean", {&x});
  if (x.size() == 0) throw DimensionMismatch("mean of empty tensor");
  Matrix out(1, 1);
  out(0, 0) = x.value().mean();
  OpBuilder op(OpKind::Mean, {&x}, std::move(out));
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    op.commit(
        [ix, io, xn](Tape& t) {
          Scalar g = t.adj(io)(0, 0) / static_cast<Scalar>(xn->value.size());
          t.adj_add(ix, Matrix::Constant(xn->value.rows(), xn->value.cols(), g));
        },
        [xn]() -> Matrix {
          Matrix y(1, 1);
          y(0, 0) = xn->value.mean();
          return y;
        });
  }
  return op.out;
}

Tensor select_rows(const Tensor& x, std::vector<Index> idx) {
  check_defined("select_rows", {&x});
  for (Index i : idx)
    if (i < 0 || i >= x.rows())
      throw DimensionMismatch("select_rows: index " + std::to_string(i) + " out of range");
  OpBuilder op(OpKind::SelectRows, {&x}, select_rows_fwd(x.value(), idx));
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    auto idx_copy = std::make_shared<std::vector<Index>>(std::move(idx));
    op.commit(
        [ix, io, xn, idx_copy](Tape& t) {
          Matrix dx = Matrix::Zero(xn->value.rows(), xn->value.cols());
          const Matrix& d = t.adj(io);
          for (std::size_t i = 0; i < idx_copy->size(); ++i)
            dx.row((*idx_copy)[i]) += d.row(static_cast<Index>(i));
          t.adj_add(ix, dx);
        },
        [xn, idx_copy]() -> Matrix { return select_rows_fwd(xn->value, *idx_copy); });
  }
  return op.out;
}

Tensor select_cols(const Tensor& x, std::vector<Index> idx) {
  check_defined("select_cols", {&x});
  for (Index j : idx)
    if (j < 0 || j >= x.cols())
      throw DimensionMismatch("select_cols: index " + std::to_string(j) + " out of range");
  OpBuilder op(OpKind::SelectCols, {&x}, select_cols_fwd(x.value(), idx));
  if (op.live) {
    auto xn = x.shared_node();
    int ix = op.ids[0], io = op.out_id;
    auto idx_copy = std::make_shared<std::vector<Index>>(std::move(idx));
    op.commit(
        [ix, io, xn, idx_copy](Tape& t) {
          Matrix dx = Matrix::Zero(xn->value.rows(), xn->value.cols());
          const Matrix& d = t.adj(io);
          for (std::size_t j = 0; j < idx_copy->size(); ++j)
            dx.col((*idx_copy)[j]) += d.col(static_cast<Index>(j));
          t.adj_add(ix, dx);
        },
        [xn, idx_copy]() -> Matrix { return select_cols_fwd(xn->value, *idx_copy); });
  }
  return op.out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionMismatch("concat_cols: no parts");
  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) {
    check_defined("concat_cols", {&p});
    if (p.rows() != parts[0].rows()) throw DimensionMismatch("concat_cols: row counts differ");
    ptrs.push_back(&p);
  }
  std::vector<std::shared_ptr<TensorNode>> part_nodes;
  for (const Tensor& p : parts) part_nodes.push_back(p.shared_node());
  Matrix out = concat_cols_fwd(part_nodes);

  // OpBuilder takes an initializer_list; register manually for the variadic case.
  Tensor result = Tensor::from_matrix(std::move(out));
  bool live = false;
  if (g_tape != nullptr)
    for (const Tensor& p : parts)
      if (p.requires_grad()) live = true;
  if (!live) return result;
  Tape& tape = *g_tape;
  result.set_requires_grad(true);
  std::vector<int> ids;
  for (const Tensor& p : parts) ids.push_back(tape.ensure_id(p));
  int out_id = tape.ensure_id(result);
  std::vector<Index> widths;
  for (const auto& pn : part_nodes) widths.push_back(pn->value.cols());
  tape.push_record(
      {OpKind::ConcatCols, ids, out_id,
       [ids, out_id, widths](Tape& t) {
         const Matrix& d = t.adj(out_id);
         Index at = 0;
         for (std::size_t i = 0; i < ids.size(); ++i) {
           t.adj_add(ids[i], d.middleCols(at, widths[i]));
           at += widths[i];
         }
       },
       [part_nodes]() -> Matrix { return concat_cols_fwd(part_nodes); }});
  return result;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

}  // namespace distilkit
