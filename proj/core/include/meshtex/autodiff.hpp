#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix; scalars are 1x1. Each primitive records a
// backward rule written in terms of other primitives, so a gradient computed
// with create_graph = true is itself a differentiable expression. The
// gradient penalty relies on this to differentiate the norm of an input
// gradient with respect to critic weights.
//
// Binary elementwise ops broadcast operands whose row or column count is 1.
//
// Instantiated for float (training) and double (gradient checks).

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

namespace meshtex::ad {

using IndexList = std::shared_ptr<const std::vector<std::uint32_t>>;

inline IndexList make_index(std::vector<std::uint32_t> indices) {
  return std::make_shared<const std::vector<std::uint32_t>>(std::move(indices));
}

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data);
  Matrix(std::initializer_list<std::initializer_list<T>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
class Var;

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad_output)>;

template <typename T>
struct Node {
  Matrix<T> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  BackwardFn<T> backward;  // empty on leaves and constants
  const char* op = "leaf";
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var constant(Matrix<T> value);
  static Var parameter(Matrix<T> value);
  static Var scalar(T value) { return constant(Matrix<T>(1, 1, value)); }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  // Leaves only: optimizers and finite differences write parameters in place.
  Matrix<T>& mutable_value() { return node_->value; }
  // Leaves only: a frozen leaf is treated as a constant by later graphs.
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared_node() const { return node_; }

  // Constant copy of the current value, cut from the graph.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// ---- grad mode -------------------------------------------------------------

bool grad_enabled();

// Disables graph recording in scope (forward values are unchanged).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- threading -------------------------------------------------------------

// Caps worker threads used by large kernels; 1 disables threading. Results
// do not depend on the thread count.
void set_num_threads(int threads);
int num_threads();
// Applies MESHTEX_THREADS when set.
void configure_threads_from_env();

// ---- primitives ------------------------------------------------------------

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> neg(const Var<T>& a);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T shift);

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> transpose(const Var<T>& a);

// Sum over broadcast dimensions down to rows x cols (each 1 or unchanged).
template <typename T> Var<T> reduce_to(const Var<T>& a, std::size_t rows, std::size_t cols);
template <typename T> Var<T> broadcast_to(const Var<T>& a, std::size_t rows, std::size_t cols);
template <typename T> Var<T> sum(const Var<T>& a);
template <typename T> Var<T> mean(const Var<T>& a);
template <typename T> Var<T> sum_rows(const Var<T>& a);  // 1 x cols
template <typename T> Var<T> sum_cols(const Var<T>& a);  // rows x 1

template <typename T> Var<T> square(const Var<T>& a);
template <typename T> Var<T> sqrt(const Var<T>& a);
template <typename T> Var<T> reciprocal(const Var<T>& a);
template <typename T> Var<T> leaky_relu(const Var<T>& a, T negative_slope);

template <typename T> Var<T> gather_rows(const Var<T>& a, const IndexList& rows);
template <typename T> Var<T> scatter_add_rows(const Var<T>& a, const IndexList& rows, std::size_t out_rows);
template <typename T> Var<T> gather_cols(const Var<T>& a, const IndexList& cols);
template <typename T> Var<T> scatter_add_cols(const Var<T>& a, const IndexList& cols, std::size_t out_cols);
// out(i, j) = a(rows[i * cols + j], j) and its adjoint.
template <typename T> Var<T> index_gather(const Var<T>& a, const IndexList& rows);
template <typename T> Var<T> index_scatter(const Var<T>& a, const IndexList& rows, std::size_t out_rows);

// Max over consecutive groups of `group` rows, per column. Ties pick the
// lowest row; the gradient flows to the selected row only.
template <typename T> Var<T> group_max(const Var<T>& a, std::size_t group);
// Source row of each element chosen by group_max (for tests and oracles).
template <typename T> std::vector<std::uint32_t> group_argmax(const Matrix<T>& a, std::size_t group);

template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);

// Per-column standardization over all rows, then per-column affine.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps = T(1e-5));
template <typename T> Var<T> affine_channels(const Var<T>& x, const Var<T>& gain, const Var<T>& shift);
// Mean of squared differences over all elements.
template <typename T> Var<T> squared_error(const Var<T>& a, const Var<T>& b);
// Frobenius norm as a 1x1 value.
template <typename T> Var<T> l2_norm(const Var<T>& a);
// Scatter-add rows then divide each output row by its hit count.
template <typename T> Var<T> scatter_mean_rows(const Var<T>& a, const IndexList& rows, std::size_t out_rows);
// Per-row Euclidean norm (rows x 1). The gradient at a zero row is zero;
// first-order use only.
template <typename T> Var<T> row_norm(const Var<T>& a);

template <typename T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }
template <typename T> Var<T> operator/(const Var<T>& a, const Var<T>& b) { return div(a, b); }
template <typename T> Var<T> operator-(const Var<T>& a) { return neg(a); }

// ---- differentiation -------------------------------------------------------

// Nodes reachable from a root through requires_grad edges, in topological
// order (parents before children).
template <typename T>
class Tape {
 public:
  explicit Tape(const Var<T>& root);
  const std::vector<Node<T>*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node<T>*> nodes_;
};

// Gradients of a scalar output with respect to `inputs`. Inputs not reached
// get a zero constant. With create_graph the results stay attached to the
// graph and can be differentiated again. Throws ShapeError on a non-scalar
// output.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, std::span<const Var<T>> inputs, bool create_graph = false);

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& inputs, bool create_graph = false) {
  return grad(output, std::span<const Var<T>>(inputs), create_graph);
}

template <typename T>
class GradientMap {
 public:
  // Zero matrix when `leaf` was not reachable from the loss.
  Matrix<T> of(const Var<T>& leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  template <typename U>
  friend GradientMap<U> backward(const Var<U>& loss);
  std::unordered_map<const Node<T>*, Matrix<T>> grads_;
};

// First-order gradients for every leaf parameter reachable from `loss`.
template <typename T>
GradientMap<T> backward(const Var<T>& loss);

// ---- gradient checking -----------------------------------------------------

// Records the discrete choices (row-max winners, rectifier signs) made while
// evaluating a function so that finite differences straddling a kink can be
// detected.
struct KinkLog {
  std::uint64_t signature = 1469598103934665603ull;
  std::size_t ties = 0;
  void mix(std::uint64_t value) {
    signature ^= value + 0x9e3779b97f4a7c15ull + (signature << 6) + (signature >> 2);
  }
};

class KinkScope {
 public:
  explicit KinkScope(KinkLog& log);
  ~KinkScope();
  KinkScope(const KinkScope&) = delete;
  KinkScope& operator=(const KinkScope&) = delete;

 private:
  KinkLog* previous_;
};

KinkLog* active_kink_log();

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose central difference crossed a kink.
  std::size_t skipped = 0;
  // The base point itself sits on a tie; no coordinate was checked.
  bool non_smooth = false;
};

// Compares analytic gradients of scalar f() against central differences,
// max over coordinates of |analytic - fd| / max(1, |analytic|). f must rebuild
// its graph from the current parameter values on every call. When
// max_coords_per_param is nonzero, that many coordinates per parameter are
// sampled with `seed`. Throws DivergenceError on non-finite values.
template <typename T>
GradCheckResult grad_check(const std::function<Var<T>()>& f, std::span<const Var<T>> params, T h,
                           std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

}  // namespace meshtex::ad
