#include "meshtex/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

#include <fmt/format.h>

#include "meshtex/errors.hpp"

namespace meshtex::ad {

// ---- Matrix ----------------------------------------------------------------

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError(fmt::format("matrix data has {} entries, expected {}x{}", data_.size(), rows_, cols_));
  }
}

template <typename T>
Matrix<T>::Matrix(std::initializer_list<std::initializer_list<T>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

// ---- grad mode, threads, kink log ------------------------------------------

namespace {

thread_local bool t_grad_enabled = true;
thread_local KinkLog* t_kink_log = nullptr;
std::atomic<int> g_threads{1};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(t_grad_enabled) { t_grad_enabled = enabled; }
  ~GradModeGuard() { t_grad_enabled = previous_; }

 private:
  bool previous_;
};

}  // namespace

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_num_threads(int threads) { g_threads = std::max(1, threads); }
int num_threads() { return g_threads; }
void configure_threads_from_env() {
  if (const char* env = std::getenv("MESHTEX_THREADS")) {
    try {
      set_num_threads(std::stoi(env));
    } catch (const std::exception&) {
      throw ParseError(fmt::format("MESHTEX_THREADS must be an integer, got '{}'", env));
    }
  }
}

KinkScope::KinkScope(KinkLog& log) : previous_(t_kink_log) { t_kink_log = &log; }
KinkScope::~KinkScope() { t_kink_log = previous_; }
KinkLog* active_kink_log() { return t_kink_log; }

// ---- Var -------------------------------------------------------------------

template <typename T>
Var<T> Var<T>::constant(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::parameter(Matrix<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return Var(std::move(node));
}

template <typename T>
T Var<T>::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError(fmt::format("item() on a {}x{} value", rows(), cols()));
  return node_->value[0];
}

namespace {

template <typename T>
Var<T> make_op(Matrix<T> value, std::initializer_list<Var<T>> parents, const char* op, BackwardFn<T> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (t_grad_enabled) {
    bool any = false;
    for (const Var<T>& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Var<T>& p : parents) node->parents.push_back(p.shared_node());
      node->backward = std::move(backward);
    }
  }
  return Var<T>(std::move(node));
}

std::size_t broadcast_dim(std::size_t a, std::size_t b, const char* op) {
  if (a == b || b == 1) return a;
  if (a == 1) return b;
  throw ShapeError(fmt::format("{}: cannot broadcast extent {} against {}", op, a, b));
}

template <typename T, typename F>
Matrix<T> elementwise(const Matrix<T>& a, const Matrix<T>& b, const char* op, F f) {
  const std::size_t rows = broadcast_dim(a.rows(), b.rows(), op);
  const std::size_t cols = broadcast_dim(a.cols(), b.cols(), op);
  Matrix<T> out(rows, cols);
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const std::size_t ars = a.rows() == 1 ? 0 : a.cols(), acs = a.cols() == 1 ? 0 : 1;
  const std::size_t brs = b.rows() == 1 ? 0 : b.cols(), bcs = b.cols() == 1 ? 0 : 1;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = f(a[i * ars + j * acs], b[i * brs + j * bcs]);
  }
  return out;
}

template <typename T, typename F>
Matrix<T> unary(const Matrix<T>& a, F f) {
  Matrix<T> out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// C = A * B for row-major A (m x k), B (k x n). Each output row accumulates
// over k in order, so results do not depend on threading.
template <typename T>
Matrix<T> gemm(const Matrix<T>& a, const Matrix<T>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> c(m, n);
  const T* A = a.ptr();
  const T* B = b.ptr();
  T* C = c.ptr();
  [[maybe_unused]] const int threads = num_threads();
  [[maybe_unused]] const bool parallel = threads > 1 && m * n * k > (1u << 18);
#if defined(MESHTEX_HAVE_OPENMP)
#pragma omp parallel for if (parallel) num_threads(threads) schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
    T* ci = C + i * n;
    const T* ai = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

template <typename T>
Matrix<T> transposed(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

void check_indices(const IndexList& idx, std::size_t bound, const char* op) {
  if (!idx) throw ShapeError(fmt::format("{}: null index list", op));
  for (std::uint32_t i : *idx) {
    if (i >= bound) throw ShapeError(fmt::format("{}: index {} out of range {}", op, i, bound));
  }
}

}  // namespace

// ---- arithmetic ------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(elementwise(a.value(), b.value(), "add", std::plus<T>()), {a, b}, "add",
                    [a, b](const Var<T>& g) {
                      return std::vector<Var<T>>{reduce_to(g, a.rows(), a.cols()), reduce_to(g, b.rows(), b.cols())};
                    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(elementwise(a.value(), b.value(), "sub", std::minus<T>()), {a, b}, "sub",
                    [a, b](const Var<T>& g) {
                      return std::vector<Var<T>>{reduce_to(g, a.rows(), a.cols()),
                                                 reduce_to(neg(g), b.rows(), b.cols())};
                    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(elementwise(a.value(), b.value(), "mul", std::multiplies<T>()), {a, b}, "mul",
                    [a, b](const Var<T>& g) {
                      std::vector<Var<T>> out(2);
                      if (a.requires_grad()) out[0] = reduce_to(mul(g, b), a.rows(), a.cols());
                      if (b.requires_grad()) out[1] = reduce_to(mul(g, a), b.rows(), b.cols());
                      return out;
                    });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return make_op<T>(elementwise(a.value(), b.value(), "div", std::divides<T>()), {a, b}, "div",
                    [a, b](const Var<T>& g) {
                      std::vector<Var<T>> out(2);
                      if (a.requires_grad()) out[0] = reduce_to(div(g, b), a.rows(), a.cols());
                      if (b.requires_grad()) {
                        out[1] = reduce_to(neg(div(mul(g, a), square(b))), b.rows(), b.cols());
                      }
                      return out;
                    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return make_op<T>(unary(a.value(), [factor](T x) { return x * factor; }), {a}, "scale",
                    [factor](const Var<T>& g) { return std::vector<Var<T>>{scale(g, factor)}; });
}

template <typename T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T shift) {
  return make_op<T>(unary(a.value(), [shift](T x) { return x + shift; }), {a}, "add_scalar",
                    [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError(fmt::format("matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
  }
  return make_op<T>(gemm(a.value(), b.value()), {a, b}, "matmul", [a, b](const Var<T>& g) {
    std::vector<Var<T>> out(2);
    if (a.requires_grad()) out[0] = matmul(g, transpose(b));
    if (b.requires_grad()) out[1] = matmul(transpose(a), g);
    return out;
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  return make_op<T>(transposed(a.value()), {a}, "transpose",
                    [](const Var<T>& g) { return std::vector<Var<T>>{transpose(g)}; });
}

// ---- reductions and broadcasting -------------------------------------------

template <typename T>
Var<T> reduce_to(const Var<T>& a, std::size_t rows, std::size_t cols) {
  if (a.rows() == rows && a.cols() == cols) return a;
  if ((rows != 1 && rows != a.rows()) || (cols != 1 && cols != a.cols())) {
    throw ShapeError(fmt::format("reduce_to: cannot reduce {}x{} to {}x{}", a.rows(), a.cols(), rows, cols));
  }
  const Matrix<T>& x = a.value();
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(rows == 1 ? 0 : i, cols == 1 ? 0 : j) += x(i, j);
  }
  const std::size_t in_rows = a.rows(), in_cols = a.cols();
  return make_op<T>(std::move(out), {a}, "reduce_to", [in_rows, in_cols](const Var<T>& g) {
    return std::vector<Var<T>>{broadcast_to(g, in_rows, in_cols)};
  });
}

template <typename T>
Var<T> broadcast_to(const Var<T>& a, std::size_t rows, std::size_t cols) {
  if (a.rows() == rows && a.cols() == cols) return a;
  if ((a.rows() != 1 && a.rows() != rows) || (a.cols() != 1 && a.cols() != cols)) {
    throw ShapeError(fmt::format("broadcast_to: cannot broadcast {}x{} to {}x{}", a.rows(), a.cols(), rows, cols));
  }
  const Matrix<T>& x = a.value();
  Matrix<T> out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = x(x.rows() == 1 ? 0 : i, x.cols() == 1 ? 0 : j);
  }
  const std::size_t in_rows = a.rows(), in_cols = a.cols();
  return make_op<T>(std::move(out), {a}, "broadcast_to", [in_rows, in_cols](const Var<T>& g) {
    return std::vector<Var<T>>{reduce_to(g, in_rows, in_cols)};
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  return reduce_to(a, 1, 1);
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a.value().size() == 0) throw ShapeError("mean of an empty matrix");
  return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

template <typename T>
Var<T> sum_rows(const Var<T>& a) {
  return reduce_to(a, 1, a.cols());
}

template <typename T>
Var<T> sum_cols(const Var<T>& a) {
  return reduce_to(a, a.rows(), 1);
}

// ---- elementwise nonlinearities --------------------------------------------

template <typename T>
Var<T> square(const Var<T>& a) {
  return make_op<T>(unary(a.value(), [](T x) { return x * x; }), {a}, "square",
                    [a](const Var<T>& g) { return std::vector<Var<T>>{mul(g, scale(a, T(2)))}; });
}

template <typename T>
Var<T> sqrt(const Var<T>& a) {
  Var<T> out = make_op<T>(unary(a.value(), [](T x) { return std::sqrt(x); }), {a}, "sqrt", nullptr);
  if (out.requires_grad()) {
    std::weak_ptr<Node<T>> self = out.shared_node();
    out.node()->backward = [self](const Var<T>& g) {
      return std::vector<Var<T>>{div(g, scale(Var<T>(self.lock()), T(2)))};
    };
  }
  return out;
}

template <typename T>
Var<T> reciprocal(const Var<T>& a) {
  Var<T> out = make_op<T>(unary(a.value(), [](T x) { return T(1) / x; }), {a}, "reciprocal", nullptr);
  if (out.requires_grad()) {
    std::weak_ptr<Node<T>> self = out.shared_node();
    out.node()->backward = [self](const Var<T>& g) {
      return std::vector<Var<T>>{neg(mul(g, square(Var<T>(self.lock()))))};
    };
  }
  return out;
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T negative_slope) {
  const Matrix<T>& x = a.value();
  Matrix<T> slope(x.rows(), x.cols());
  Matrix<T> out(x.rows(), x.cols());
  KinkLog* log = t_kink_log;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool negative = x[i] < T(0);
    slope[i] = negative ? negative_slope : T(1);
    out[i] = x[i] * slope[i];
    if (log) {
      log->mix(negative ? 1 : 2);
      if (x[i] == T(0)) ++log->ties;
    }
  }
  Var<T> mask = Var<T>::constant(std::move(slope));
  return make_op<T>(std::move(out), {a}, "leaky_relu",
                    [mask](const Var<T>& g) { return std::vector<Var<T>>{mul(g, mask)}; });
}

// ---- indexing --------------------------------------------------------------

template <typename T>
Var<T> gather_rows(const Var<T>& a, const IndexList& rows) {
  check_indices(rows, a.rows(), "gather_rows");
  const std::size_t cols = a.cols();
  Matrix<T> out(rows->size(), cols);
  for (std::size_t i = 0; i < rows->size(); ++i) {
    std::copy_n(a.value().ptr() + (*rows)[i] * cols, cols, out.ptr() + i * cols);
  }
  const std::size_t n = a.rows();
  return make_op<T>(std::move(out), {a}, "gather_rows", [rows, n](const Var<T>& g) {
    return std::vector<Var<T>>{scatter_add_rows(g, rows, n)};
  });
}

template <typename T>
Var<T> scatter_add_rows(const Var<T>& a, const IndexList& rows, std::size_t out_rows) {
  check_indices(rows, out_rows, "scatter_add_rows");
  if (rows->size() != a.rows()) throw ShapeError("scatter_add_rows: index count must equal row count");
  const std::size_t cols = a.cols();
  Matrix<T> out(out_rows, cols);
  for (std::size_t i = 0; i < rows->size(); ++i) {
    T* dst = out.ptr() + (*rows)[i] * cols;
    const T* src = a.value().ptr() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
  }
  return make_op<T>(std::move(out), {a}, "scatter_add_rows",
                    [rows](const Var<T>& g) { return std::vector<Var<T>>{gather_rows(g, rows)}; });
}

template <typename T>
Var<T> gather_cols(const Var<T>& a, const IndexList& cols) {
  check_indices(cols, a.cols(), "gather_cols");
  Matrix<T> out(a.rows(), cols->size());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < cols->size(); ++k) out(i, k) = a.value()(i, (*cols)[k]);
  }
  const std::size_t n = a.cols();
  return make_op<T>(std::move(out), {a}, "gather_cols", [cols, n](const Var<T>& g) {
    return std::vector<Var<T>>{scatter_add_cols(g, cols, n)};
  });
}

template <typename T>
Var<T> scatter_add_cols(const Var<T>& a, const IndexList& cols, std::size_t out_cols) {
  check_indices(cols, out_cols, "scatter_add_cols");
  if (cols->size() != a.cols()) throw ShapeError("scatter_add_cols: index count must equal column count");
  Matrix<T> out(a.rows(), out_cols);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < cols->size(); ++k) out(i, (*cols)[k]) += a.value()(i, k);
  }
  return make_op<T>(std::move(out), {a}, "scatter_add_cols",
                    [cols](const Var<T>& g) { return std::vector<Var<T>>{gather_cols(g, cols)}; });
}

template <typename T>
Var<T> index_gather(const Var<T>& a, const IndexList& rows) {
  check_indices(rows, a.rows(), "index_gather");
  const std::size_t cols = a.cols();
  if (cols == 0 || rows->size() % cols != 0) throw ShapeError("index_gather: index count not a multiple of cols");
  Matrix<T> out(rows->size() / cols, cols);
  for (std::size_t e = 0; e < rows->size(); ++e) out[e] = a.value()((*rows)[e], e % cols);
  const std::size_t n = a.rows();
  return make_op<T>(std::move(out), {a}, "index_gather", [rows, n](const Var<T>& g) {
    return std::vector<Var<T>>{index_scatter(g, rows, n)};
  });
}

template <typename T>
Var<T> index_scatter(const Var<T>& a, const IndexList& rows, std::size_t out_rows) {
  check_indices(rows, out_rows, "index_scatter");
  if (rows->size() != a.value().size()) throw ShapeError("index_scatter: one index per element required");
  const std::size_t cols = a.cols();
  Matrix<T> out(out_rows, cols);
  for (std::size_t e = 0; e < rows->size(); ++e) out((*rows)[e], e % cols) += a.value()[e];
  return make_op<T>(std::move(out), {a}, "index_scatter",
                    [rows](const Var<T>& g) { return std::vector<Var<T>>{index_gather(g, rows)}; });
}

template <typename T>
std::vector<std::uint32_t> group_argmax(const Matrix<T>& x, std::size_t group) {
  if (group == 0 || x.rows() % group != 0) {
    throw ShapeError(fmt::format("group_max: {} rows not divisible into groups of {}", x.rows(), group));
  }
  const std::size_t out_rows = x.rows() / group, cols = x.cols();
  std::vector<std::uint32_t> idx(out_rows * cols);
  KinkLog* log = t_kink_log;
  for (std::size_t i = 0; i < out_rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::size_t best = i * group;
      bool tie = false;
      for (std::size_t r = i * group + 1; r < (i + 1) * group; ++r) {
        if (x(r, j) > x(best, j)) {
          best = r;
          tie = false;
        } else if (x(r, j) == x(best, j)) {
          tie = true;
        }
      }
      idx[i * cols + j] = static_cast<std::uint32_t>(best);
      if (log) {
        log->mix(best - i * group);
        if (tie) ++log->ties;
      }
    }
  }
  return idx;
}

template <typename T>
Var<T> group_max(const Var<T>& a, std::size_t group) {
  return index_gather(a, make_index(group_argmax(a.value(), group)));
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Var<T> out;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::vector<std::uint32_t> cols(p.cols());
    std::iota(cols.begin(), cols.end(), static_cast<std::uint32_t>(offset));
    offset += p.cols();
    Var<T> placed = scatter_add_cols(p, make_index(std::move(cols)), total);
    out = out.defined() ? add(out, placed) : placed;
  }
  return out;
}

// ---- composites ------------------------------------------------------------

template <typename T>
Var<T> affine_channels(const Var<T>& x, const Var<T>& gain, const Var<T>& shift) {
  return add(mul(x, gain), shift);
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& shift, T eps) {
  if (x.rows() < 2) throw ShapeError("instance_norm needs at least 2 rows per channel");
  const T inv_n = T(1) / static_cast<T>(x.rows());
  Var<T> centered = sub(x, scale(sum_rows(x), inv_n));
  Var<T> variance = scale(sum_rows(square(centered)), inv_n);
  Var<T> inv_std = reciprocal(sqrt(add_scalar(variance, eps)));
  return affine_channels(mul(centered, inv_std), gain, shift);
}

template <typename T>
Var<T> squared_error(const Var<T>& a, const Var<T>& b) {
  return mean(square(sub(a, b)));
}

template <typename T>
Var<T> l2_norm(const Var<T>& a) {
  return sqrt(sum(square(a)));
}

template <typename T>
Var<T> scatter_mean_rows(const Var<T>& a, const IndexList& rows, std::size_t out_rows) {
  check_indices(rows, out_rows, "scatter_mean_rows");
  Matrix<T> inv_count(out_rows, 1);
  for (std::uint32_t r : *rows) inv_count[r] += T(1);
  for (std::size_t i = 0; i < out_rows; ++i) inv_count[i] = inv_count[i] > T(0) ? T(1) / inv_count[i] : T(0);
  return mul(scatter_add_rows(a, rows, out_rows), Var<T>::constant(std::move(inv_count)));
}

template <typename T>
Var<T> row_norm(const Var<T>& a) {
  const Matrix<T>& x = a.value();
  Matrix<T> out(x.rows(), 1);
  Matrix<T> inv(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    T s = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += x(i, j) * x(i, j);
    out[i] = std::sqrt(s);
    inv[i] = out[i] > T(0) ? T(1) / out[i] : T(0);
  }
  Var<T> inv_norm = Var<T>::constant(std::move(inv));
  return make_op<T>(std::move(out), {a}, "row_norm", [a, inv_norm](const Var<T>& g) {
    return std::vector<Var<T>>{mul(mul(a, inv_norm), g)};
  });
}

// ---- differentiation -------------------------------------------------------

template <typename T>
Tape<T>::Tape(const Var<T>& root) {
  if (!root.requires_grad()) return;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  visited.insert(root.node());
  stack.emplace_back(root.node(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      nodes_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, std::span<const Var<T>> inputs, bool create_graph) {
  if (output.rows() != 1 || output.cols() != 1) {
    throw ShapeError(fmt::format("grad: output must be scalar, got {}x{}", output.rows(), output.cols()));
  }
  std::unordered_set<const Node<T>*> keep;
  for (const auto& in : inputs) keep.insert(in.node());

  const Tape<T> tape(output);
  std::unordered_map<const Node<T>*, Var<T>> grads;
  GradModeGuard mode(create_graph);
  if (output.requires_grad()) grads.emplace(output.node(), Var<T>::constant(Matrix<T>(1, 1, T(1))));

  const auto& nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node<T>* node = *it;
    auto found = grads.find(node);
    if (found == grads.end() || !node->backward) continue;
    const Var<T> g = found->second;
    if (!keep.contains(node)) grads.erase(found);
    const std::vector<Var<T>> parent_grads = node->backward(g);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Node<T>* parent = node->parents[i].get();
      if (!parent->requires_grad || i >= parent_grads.size() || !parent_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(parent, parent_grads[i]);
      if (!inserted) slot->second = add(slot->second, parent_grads[i]);
    }
  }

  std::vector<Var<T>> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto found = grads.find(in.node());
    result.push_back(found != grads.end() ? found->second
                                          : Var<T>::constant(Matrix<T>(in.rows(), in.cols())));
  }
  return result;
}

template <typename T>
Matrix<T> GradientMap<T>::of(const Var<T>& leaf) const {
  auto it = grads_.find(leaf.node());
  return it != grads_.end() ? it->second : Matrix<T>(leaf.rows(), leaf.cols());
}

template <typename T>
GradientMap<T> backward(const Var<T>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError(fmt::format("backward: loss must be scalar, got {}x{}", loss.rows(), loss.cols()));
  }
  std::vector<Var<T>> leaves;
  const Tape<T> tape(loss);
  for (Node<T>* node : tape.nodes()) {
    if (!node->backward) {
      // Non-owning alias: the tape keeps the node alive for this call.
      leaves.emplace_back(std::shared_ptr<Node<T>>(std::shared_ptr<Node<T>>{}, node));
    }
  }
  const auto grads = grad(loss, std::span<const Var<T>>(leaves), false);
  GradientMap<T> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) out.grads_.emplace(leaves[i].node(), grads[i].value());
  return out;
}

// ---- gradient checking -----------------------------------------------------

template <typename T>
GradCheckResult grad_check(const std::function<Var<T>()>& f, std::span<const Var<T>> params, T h,
                           std::size_t max_coords_per_param, std::uint64_t seed) {
  if (!(h > T(0))) throw ShapeError("grad_check: step must be positive");
  GradCheckResult result;
  KinkLog base_log;
  Var<T> base;
  {
    KinkScope scope(base_log);
    base = f();
  }
  if (!std::isfinite(static_cast<double>(base.item()))) throw DivergenceError("grad_check: f is not finite");
  if (base_log.ties > 0) {
    result.non_smooth = true;
    return result;
  }
  const auto analytic = grad(base, params, false);

  // Recording stays on: f may take input gradients internally.
  std::mt19937_64 rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Var<T> param = params[p];
    std::vector<std::size_t> coords(param.value().size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords_per_param);
    }
    for (std::size_t c : coords) {
      const T saved = param.mutable_value()[c];
      KinkLog plus_log, minus_log;
      T plus, minus;
      param.mutable_value()[c] = saved + h;
      {
        KinkScope scope(plus_log);
        plus = f().item();
      }
      param.mutable_value()[c] = saved - h;
      {
        KinkScope scope(minus_log);
        minus = f().item();
      }
      param.mutable_value()[c] = saved;
      if (!std::isfinite(static_cast<double>(plus)) || !std::isfinite(static_cast<double>(minus))) {
        throw DivergenceError("grad_check: f is not finite near the check point");
      }
      if (plus_log.signature != base_log.signature || minus_log.signature != base_log.signature) {
        ++result.skipped;
        continue;
      }
      const double fd = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[p].value()[c]);
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - fd) / std::max(1.0, std::abs(a)));
      ++result.checked;
    }
  }
  return result;
}

// ---- instantiations --------------------------------------------------------

#define MESHTEX_AD_INSTANTIATE(T)                                                                     \
  template class Matrix<T>;                                                                          \
  template class Var<T>;                                                                             \
  template class Tape<T>;                                                                            \
  template class GradientMap<T>;                                                                     \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> div(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> neg(const Var<T>&);                                                                \
  template Var<T> scale(const Var<T>&, T);                                                           \
  template Var<T> add_scalar(const Var<T>&, T);                                                      \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> transpose(const Var<T>&);                                                          \
  template Var<T> reduce_to(const Var<T>&, std::size_t, std::size_t);                                \
  template Var<T> broadcast_to(const Var<T>&, std::size_t, std::size_t);                             \
  template Var<T> sum(const Var<T>&);                                                                \
  template Var<T> mean(const Var<T>&);                                                               \
  template Var<T> sum_rows(const Var<T>&);                                                           \
  template Var<T> sum_cols(const Var<T>&);                                                           \
  template Var<T> square(const Var<T>&);                                                             \
  template Var<T> sqrt(const Var<T>&);                                                               \
  template Var<T> reciprocal(const Var<T>&);                                                         \
  template Var<T> leaky_relu(const Var<T>&, T);                                                      \
  template Var<T> gather_rows(const Var<T>&, const IndexList&);                                      \
  template Var<T> scatter_add_rows(const Var<T>&, const IndexList&, std::size_t);                    \
  template Var<T> gather_cols(const Var<T>&, const IndexList&);                                      \
  template Var<T> scatter_add_cols(const Var<T>&, const IndexList&, std::size_t);                    \
  template Var<T> index_gather(const Var<T>&, const IndexList&);                                     \
  template Var<T> index_scatter(const Var<T>&, const IndexList&, std::size_t);                       \
  template Var<T> group_max(const Var<T>&, std::size_t);                                             \
  template std::vector<std::uint32_t> group_argmax(const Matrix<T>&, std::size_t);                   \
  template Var<T> concat_cols(std::span<const Var<T>>);                                              \
  template Var<T> instance_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
  template Var<T> affine_channels(const Var<T>&, const Var<T>&, const Var<T>&);                      \
  template Var<T> squared_error(const Var<T>&, const Var<T>&);                                       \
  template Var<T> l2_norm(const Var<T>&);                                                            \
  template Var<T> scatter_mean_rows(const Var<T>&, const IndexList&, std::size_t);                   \
  template Var<T> row_norm(const Var<T>&);                                                           \
  template std::vector<Var<T>> grad(const Var<T>&, std::span<const Var<T>>, bool);                   \
  template GradientMap<T> backward(const Var<T>&);                                                   \
  template GradCheckResult grad_check(const std::function<Var<T>()>&, std::span<const Var<T>>, T,   \
                                      std::size_t, std::uint64_t);

MESHTEX_AD_INSTANTIATE(float)
MESHTEX_AD_INSTANTIATE(double)

}  // namespace meshtex::ad
