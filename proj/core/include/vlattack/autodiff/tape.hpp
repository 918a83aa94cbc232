#pragma once

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <vector>

namespace vlattack::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

// Handle to a value recorded on a Tape. Valid for the lifetime of the tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  // Zero-sized when no gradient reached this node.
  const Matrix& grad() const;
  bool has_grad() const;
  bool requires_grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode recorder. Nodes are appended in evaluation order and replayed
// backwards by backward(). A tape is single-threaded; parameters borrowed via
// parameter() are only read, so many tapes may share one model.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Owned leaf that accumulates a gradient.
  Var variable(Matrix value);
  // Borrowed leaf; `value` must outlive the tape.
  Var parameter(const Matrix& value, bool requires_grad);

  // Seeds d(root)/d(root) = 1 and propagates. `root` must be 1x1.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

  // Interface used by op implementations.
  Var record(Matrix value, bool requires_grad, BackwardFn backward);
  const Matrix& value(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool has_grad(int id) const { return nodes_[id].has_grad; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }

  template <typename Expr>
  void accumulate(int id, const Eigen::MatrixBase<Expr>& g) {
    Node& node = nodes_[id];
    if (!node.requires_grad) return;
    if (!node.has_grad) {
      node.grad = g;
      node.has_grad = true;
    } else {
      node.grad += g;
    }
  }

 private:
  struct Node {
    Matrix owned;
    const Matrix* borrowed = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  // deque keeps references stable while ops append nodes.
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline const Matrix& Var::grad() const { return tape_->grad(id_); }
inline bool Var::has_grad() const { return tape_->has_grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_transposed(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Adds a 1xN row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);
// tanh approximation
Var gelu(Var a);
// Row-wise normalization with 1xN gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Multi-head scaled dot-product attention over pre-projected q, k, v.
Var attention(Var q, Var k, Var v, int heads, bool causal);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var table, std::span<const int> ids);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
// Image stored as a 1x(H*W*C) row in HWC order -> (H/P * W/P) x (P*P*C).
Var patchify(Var image, int height, int width, int channels, int patch);
// Mean over rows of -log softmax(row)[target].
Var softmax_cross_entropy(Var logits, std::span<const int> targets);
// Sum over rows r of cos(a_r, reference_r). Rows with norm < 1e-12 on either
// side contribute 0 and no gradient.
Var cosine_rows_sum(Var a, const Matrix& reference);
Var sum(Var a);
// Sum of a .* weights.
Var dot(Var a, const Matrix& weights);

// Same zero-norm rule as cosine_rows_sum, on plain values.
double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a,
              const Eigen::Ref<const Eigen::RowVectorXd>& b);

}  // namespace vlattack::ad
