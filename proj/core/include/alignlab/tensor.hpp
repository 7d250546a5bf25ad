#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace alignlab {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Scalar-work and live-storage accounting used by the cost model.
///
/// Conventions: multiplies and divides bump `mults`, adds and subtracts bump
/// `adds`, transcendentals (exp/log/tanh/erf/sqrt) bump `exps`. Comparisons,
/// copies and index arithmetic are free. `live_bytes` tracks tensor storage
/// (data and grad buffers) currently allocated on this thread;
/// `peak_live_bytes` is its high-water mark since the last reset.
struct OpCounter {
    std::uint64_t mults = 0;
    std::uint64_t adds = 0;
    std::uint64_t exps = 0;
    std::int64_t live_bytes = 0;
    std::uint64_t peak_live_bytes = 0;
    // Bytes charged per element. Storage is always double; set to 4 to report
    // costs as an fp32 deployment would incur them.
    int bytes_per_element = 8;

    static OpCounter& get();

    // Zeroes the op counts and restarts the peak from the current live set.
    void reset();
    void on_alloc(std::int64_t elements);
    void on_free(std::int64_t elements);
};

/// While alive, operations do not record backward edges; intermediate
/// tensors are freed as soon as they go out of scope.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

bool grad_enabled();

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // sized lazily during backward
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Node(Shape s, std::vector<double> d, bool rg);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    void ensure_grad();
};

}  // namespace detail

/// Dense n-dimensional double tensor participating in a reverse-mode graph.
/// Handles are cheap to copy; the underlying node is shared.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t axis) const;
    std::size_t rank() const;
    std::int64_t numel() const;
    bool requires_grad() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();  // leaf mutation only (optimizer, fd probes)
    double item() const;               // scalar tensors
    double at(std::initializer_list<std::int64_t> index) const;

    std::span<const double> grad() const;  // empty until backward reaches this node
    void zero_grad();

    /// Reverse-mode sweep from a scalar. Accumulates into `grad` of every
    /// tensor on the path that requires grad; fan-out accumulates additively.
    void backward() const;

    detail::Node* node() const { return node_.get(); }
    std::shared_ptr<detail::Node> handle() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  private:
    std::shared_ptr<detail::Node> node_;
};

// ---- elementwise (numpy-style right-aligned broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Exact zero denominators raise NumericError; guard with `where` if needed.
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator/(const Tensor& a, double b) { return divide(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

// ---- unary ----
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);   // x <= 0 raises NumericError
Tensor sqrt(const Tensor& x);  // x < 0 raises NumericError
Tensor tanh(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form

// ---- matmul and linear maps ----
// 2-D matrix product with optional transposes. Counts m*k*n mults.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x[..., k] * w[k, n] + b[n]; leading axes of x are preserved.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);

// ---- reductions ----
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
// Subgradient convention: gradient flows to the first attaining index.
Tensor min(const Tensor& x, int axis, bool keepdim = false);
Tensor max(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
std::vector<std::int64_t> argmax(const Tensor& x, int axis);  // first max wins

// ---- softmax family (numerically stabilized by max subtraction) ----
Tensor softmax(const Tensor& x, int axis);  // non-finite input raises NumericError
Tensor log_sum_exp(const Tensor& x, int axis, bool keepdim = false);

// Slices of length d along `axis` scaled to unit L2 norm; slices with norm
// <= eps are divided by eps instead (zero maps to zero).
Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-8);

// LayerNorm over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- selection / masking ----
// cond is 0/1 and carries no gradient; grads pass only through the branch
// each element selects.
Tensor where(const Tensor& cond, const Tensor& a, const Tensor& b);
// out = x when x >= threshold else 0; gradient passes through kept entries.
Tensor threshold_keep(const Tensor& x, double threshold);
Tensor ge_mask(const Tensor& x, double threshold);  // 0/1, no grad
Tensor eq_mask(const Tensor& a, const Tensor& b);   // 0/1, no grad

// ---- shape surgery (all copies; storage is contiguous row-major) ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose2d(const Tensor& x);
Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t len);  // axis 0
Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t len);  // last axis
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_last(std::span<const Tensor> parts);
// Row gather with scatter-add backward; doubles as embedding lookup.
Tensor take_rows(const Tensor& x, std::span<const std::int64_t> indices);
Tensor diag(const Tensor& x);  // [n,n] -> [n]
// Assemble a [rows, cols] matrix from rows*cols scalar tensors (row-major).
Tensor stack_scalars(std::span<const Tensor> scalars, std::int64_t rows, std::int64_t cols);
// Balanced binary summation tree; order-stable to 1e-12 across batch splits.
Tensor pairwise_sum(std::span<const Tensor> scalars);

bool all_finite(const Tensor& x);

}  // namespace alignlab
