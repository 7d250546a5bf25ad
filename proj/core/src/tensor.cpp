#include "alignlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace alignlab {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

OpCounter& OpCounter::get() {
    thread_local OpCounter counter;
    return counter;
}

void OpCounter::reset() {
    mults = 0;
    adds = 0;
    exps = 0;
    peak_live_bytes = live_bytes > 0 ? static_cast<std::uint64_t>(live_bytes) : 0;
}

void OpCounter::on_alloc(std::int64_t elements) {
    live_bytes += elements * bytes_per_element;
    if (live_bytes > 0 && static_cast<std::uint64_t>(live_bytes) > peak_live_bytes) {
        peak_live_bytes = static_cast<std::uint64_t>(live_bytes);
    }
}

void OpCounter::on_free(std::int64_t elements) {
    live_bytes -= elements * bytes_per_element;
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

namespace detail {

Node::Node(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("tensor data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_to_string(shape));
    }
    for (auto dim : shape) {
        if (dim <= 0) throw ShapeError("non-positive dimension in shape " + shape_to_string(shape));
    }
    OpCounter::get().on_alloc(numel());
}

Node::~Node() {
    OpCounter::get().on_free(numel() + static_cast<std::int64_t>(grad.size()));
}

void Node::ensure_grad() {
    if (grad.empty()) {
        grad.assign(data.size(), 0.0);
        OpCounter::get().on_alloc(numel());
    }
}

}  // namespace detail

using detail::Node;

namespace {

using NodePtr = std::shared_ptr<Node>;

NodePtr make_node(Shape shape, std::vector<double> data, bool requires_grad) {
    return std::make_shared<Node>(std::move(shape), std::move(data), requires_grad);
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : ts) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

Tensor finish(NodePtr out, bool track, std::vector<NodePtr> parents,
              std::function<void(Node&)> backward) {
    if (track) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward);
    }
    return Tensor(std::move(out));
}

void check_defined(const Tensor& t, const char* who) {
    if (!t.defined()) throw ShapeError(std::string(who) + ": undefined tensor");
}

// Right-aligned numpy broadcasting of two shapes.
Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t ra = a.size(), rb = b.size();
    const std::size_t r = ra > rb ? ra : rb;
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - ra ? 1 : a[i - (r - ra)];
        const std::int64_t db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_to_string(a) + " with " +
                             shape_to_string(b));
        }
        out[i] = da > db ? da : db;
    }
    return out;
}

// Strides (in elements) of `shape` when broadcast against `out`, with 0 for
// broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<std::int64_t> strides(out.size(), 0);
    std::int64_t stride = 1;
    const std::size_t offset = out.size() - shape.size();
    for (std::size_t i = shape.size(); i-- > 0;) {
        if (shape[i] != 1) {
            strides[offset + i] = stride;
        }
        stride *= shape[i];
    }
    return strides;
}

struct BroadcastMap {
    Shape out;
    std::vector<std::int64_t> sa;
    std::vector<std::int64_t> sb;
    std::int64_t n;
};

BroadcastMap make_broadcast(const Shape& a, const Shape& b) {
    BroadcastMap m;
    m.out = broadcast_shape(a, b);
    m.sa = broadcast_strides(a, m.out);
    m.sb = broadcast_strides(b, m.out);
    m.n = shape_numel(m.out);
    return m;
}

// Walks multi-indices of `out`, producing flat offsets into both operands.
template <typename Fn>
void for_each_broadcast(const BroadcastMap& m, Fn&& fn) {
    const std::size_t r = m.out.size();
    if (r == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t flat = 0;; ++flat) {
        fn(flat, oa, ob);
        std::size_t axis = r;
        while (axis-- > 0) {
            ++idx[axis];
            oa += m.sa[axis];
            ob += m.sb[axis];
            if (idx[axis] < m.out[axis]) break;
            oa -= m.sa[axis] * m.out[axis];
            ob -= m.sb[axis] * m.out[axis];
            idx[axis] = 0;
            if (axis == 0) return;
        }
    }
}

// Accumulates an out-shaped gradient into an operand-shaped buffer, summing
// over broadcast axes.
void accumulate_broadcast(std::vector<double>& dst, const Shape& dst_shape,
                          const std::vector<double>& src, const Shape& out_shape) {
    const auto strides = broadcast_strides(dst_shape, out_shape);
    const std::size_t r = out_shape.size();
    if (r == 0) {
        dst[0] += src[0];
        return;
    }
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t off = 0;
    OpCounter::get().adds += src.size();
    for (std::int64_t flat = 0;; ++flat) {
        dst[static_cast<std::size_t>(off)] += src[static_cast<std::size_t>(flat)];
        std::size_t axis = r;
        while (axis-- > 0) {
            ++idx[axis];
            off += strides[axis];
            if (idx[axis] < out_shape[axis]) break;
            off -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
            if (axis == 0) return;
        }
    }
}

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
    check_defined(a, "binary op");
    check_defined(b, "binary op");
    const auto m = make_broadcast(a.shape(), b.shape());
    std::vector<double> out(static_cast<std::size_t>(m.n));
    const auto da = a.data();
    const auto db = b.data();
    auto& counter = OpCounter::get();
    switch (kind) {
        case BinKind::Add:
            for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                out[static_cast<std::size_t>(o)] = da[static_cast<std::size_t>(ia)] +
                                                   db[static_cast<std::size_t>(ib)];
            });
            counter.adds += static_cast<std::uint64_t>(m.n);
            break;
        case BinKind::Sub:
            for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                out[static_cast<std::size_t>(o)] = da[static_cast<std::size_t>(ia)] -
                                                   db[static_cast<std::size_t>(ib)];
            });
            counter.adds += static_cast<std::uint64_t>(m.n);
            break;
        case BinKind::Mul:
            for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                out[static_cast<std::size_t>(o)] = da[static_cast<std::size_t>(ia)] *
                                                   db[static_cast<std::size_t>(ib)];
            });
            counter.mults += static_cast<std::uint64_t>(m.n);
            break;
        case BinKind::Div:
            for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                const double denom = db[static_cast<std::size_t>(ib)];
                if (denom == 0.0) {
                    throw NumericError("division by zero denominator");
                }
                out[static_cast<std::size_t>(o)] = da[static_cast<std::size_t>(ia)] / denom;
            });
            counter.mults += static_cast<std::uint64_t>(m.n);
            break;
    }
    auto node = make_node(m.out, std::move(out), false);
    const bool track = any_requires_grad({&a, &b});
    if (!track) return Tensor(std::move(node));

    auto pa = a.handle();
    auto pb = b.handle();
    return finish(
        std::move(node), true, {pa, pb}, [pa, pb, m, kind](Node& self) {
            auto& counter = OpCounter::get();
            const std::int64_t n = m.n;
            if (pa->requires_grad) {
                std::vector<double> ga(static_cast<std::size_t>(n));
                switch (kind) {
                    case BinKind::Add:
                    case BinKind::Sub:
                        ga = self.grad;
                        break;
                    case BinKind::Mul:
                        for_each_broadcast(m, [&](std::int64_t o, std::int64_t, std::int64_t ib) {
                            ga[static_cast<std::size_t>(o)] =
                                self.grad[static_cast<std::size_t>(o)] *
                                pb->data[static_cast<std::size_t>(ib)];
                        });
                        counter.mults += static_cast<std::uint64_t>(n);
                        break;
                    case BinKind::Div:
                        for_each_broadcast(m, [&](std::int64_t o, std::int64_t, std::int64_t ib) {
                            ga[static_cast<std::size_t>(o)] =
                                self.grad[static_cast<std::size_t>(o)] /
                                pb->data[static_cast<std::size_t>(ib)];
                        });
                        counter.mults += static_cast<std::uint64_t>(n);
                        break;
                }
                pa->ensure_grad();
                accumulate_broadcast(pa->grad, pa->shape, ga, m.out);
            }
            if (pb->requires_grad) {
                std::vector<double> gb(static_cast<std::size_t>(n));
                switch (kind) {
                    case BinKind::Add:
                        gb = self.grad;
                        break;
                    case BinKind::Sub:
                        for (std::int64_t i = 0; i < n; ++i)
                            gb[static_cast<std::size_t>(i)] = -self.grad[static_cast<std::size_t>(i)];
                        counter.adds += static_cast<std::uint64_t>(n);
                        break;
                    case BinKind::Mul:
                        for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t) {
                            gb[static_cast<std::size_t>(o)] =
                                self.grad[static_cast<std::size_t>(o)] *
                                pa->data[static_cast<std::size_t>(ia)];
                        });
                        counter.mults += static_cast<std::uint64_t>(n);
                        break;
                    case BinKind::Div:
                        // d(a/b)/db = -a / b^2
                        for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                            const double bb = pb->data[static_cast<std::size_t>(ib)];
                            gb[static_cast<std::size_t>(o)] =
                                -self.grad[static_cast<std::size_t>(o)] *
                                pa->data[static_cast<std::size_t>(ia)] / (bb * bb);
                        });
                        counter.mults += 3 * static_cast<std::uint64_t>(n);
                        break;
                }
                pb->ensure_grad();
                accumulate_broadcast(pb->grad, pb->shape, gb, m.out);
            }
        });
}

// Decomposes `shape` around `axis` into [outer, k, inner].
struct AxisView {
    std::int64_t outer = 1, k = 1, inner = 1;
    Shape reduced;       // shape with axis removed
    Shape kept;          // shape with axis set to 1
};

AxisView axis_view(const Shape& shape, int axis) {
    if (axis < 0) axis += static_cast<int>(shape.size());
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw ShapeError("axis out of range for shape " + shape_to_string(shape));
    }
    AxisView v;
    for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
        if (i < axis) v.outer *= shape[i];
        else if (i == axis) v.k = shape[i];
        else v.inner *= shape[i];
    }
    v.kept = shape;
    v.kept[static_cast<std::size_t>(axis)] = 1;
    for (int i = 0; i < static_cast<int>(shape.size()); ++i) {
        if (i != axis) v.reduced.push_back(shape[i]);
    }
    if (v.reduced.empty()) v.reduced = {1};
    return v;
}

}  // namespace

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad && g_grad_enabled));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw ShapeError("shape() on undefined tensor");
    return node_->shape;
}

std::int64_t Tensor::dim(std::size_t axis) const { return shape().at(axis); }
std::size_t Tensor::rank() const { return shape().size(); }
std::int64_t Tensor::numel() const { return node_ ? node_->numel() : 0; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::data() const {
    if (!node_) throw ShapeError("data() on undefined tensor");
    return {node_->data.data(), node_->data.size()};
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw ShapeError("mutable_data() on undefined tensor");
    return {node_->data.data(), node_->data.size()};
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() requires a scalar tensor, got " + shape_to_string(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("at(): rank mismatch");
    std::int64_t flat = 0;
    std::size_t i = 0;
    for (auto ix : index) {
        if (ix < 0 || ix >= s[i]) throw ShapeError("at(): index out of range");
        flat = flat * s[i] + ix;
        ++i;
    }
    return node_->data[static_cast<std::size_t>(flat)];
}

std::span<const double> Tensor::grad() const {
    if (!node_) throw ShapeError("grad() on undefined tensor");
    return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }
}

void Tensor::backward() const {
    if (!node_) throw ShapeError("backward() on undefined tensor");
    if (numel() != 1) throw ShapeError("backward() requires a scalar loss");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS for a reverse topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* parent = node->parents[next_child].get();
            ++next_child;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) {
            node->backward_fn(*node);
        }
    }
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul); }
Tensor divide(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Div); }

Tensor neg(const Tensor& x) { return sub(Tensor::scalar(0.0), x); }

namespace {

template <typename Fwd, typename Grad>
Tensor unary_op(const Tensor& x, Fwd fwd, Grad grad_of, std::uint64_t exps_per_elt,
                std::uint64_t mults_per_elt, std::uint64_t bw_exps, std::uint64_t bw_mults) {
    check_defined(x, "unary op");
    const auto dx = x.data();
    std::vector<double> out(dx.size());
    for (std::size_t i = 0; i < dx.size(); ++i) out[i] = fwd(dx[i]);
    auto& counter = OpCounter::get();
    counter.exps += exps_per_elt * dx.size();
    counter.mults += mults_per_elt * dx.size();
    auto node = make_node(x.shape(), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px},
                  [px, grad_of, bw_exps, bw_mults](Node& self) {
                      px->ensure_grad();
                      auto& counter = OpCounter::get();
                      const std::size_t n = self.data.size();
                      for (std::size_t i = 0; i < n; ++i) {
                          px->grad[i] += self.grad[i] * grad_of(px->data[i], self.data[i]);
                      }
                      counter.mults += (1 + bw_mults) * n;
                      counter.adds += n;
                      counter.exps += bw_exps * n;
                  });
}

}  // namespace

Tensor exp(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; }, 1, 0, 0, 0);
}

Tensor log(const Tensor& x) {
    for (double v : x.data()) {
        if (v <= 0.0) throw NumericError("log of non-positive value");
    }
    return unary_op(
        x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; }, 1, 0, 0, 1);
}

Tensor sqrt(const Tensor& x) {
    for (double v : x.data()) {
        if (v < 0.0) throw NumericError("sqrt of negative value");
    }
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; }, 1, 0, 0, 1);
}

Tensor tanh(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; }, 1, 0, 0, 2);
}

Tensor gelu(const Tensor& x) {
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    return unary_op(
        x,
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v, double) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        },
        1, 3, 2, 4);
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul expects rank-2 tensors, got " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
    }
    const std::int64_t m = trans_a ? a.dim(1) : a.dim(0);
    const std::int64_t ka = trans_a ? a.dim(0) : a.dim(1);
    const std::int64_t kb = trans_b ? b.dim(1) : b.dim(0);
    const std::int64_t n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb) {
        throw ShapeError("matmul inner dimension mismatch: " + shape_to_string(a.shape()) +
                         (trans_a ? " (transposed)" : "") + " vs " + shape_to_string(b.shape()) +
                         (trans_b ? " (transposed)" : ""));
    }
    const std::int64_t k = ka;
    const auto da = a.data();
    const auto db = b.data();
    const std::int64_t lda = a.dim(1);
    const std::int64_t ldb = b.dim(1);
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = trans_a ? da[static_cast<std::size_t>(kk * lda + i)]
                                      : da[static_cast<std::size_t>(i * lda + kk)];
            if (trans_b) {
                for (std::int64_t j = 0; j < n; ++j) {
                    out[static_cast<std::size_t>(i * n + j)] +=
                        av * db[static_cast<std::size_t>(j * ldb + kk)];
                }
            } else {
                const std::size_t base = static_cast<std::size_t>(kk * ldb);
                for (std::int64_t j = 0; j < n; ++j) {
                    out[static_cast<std::size_t>(i * n + j)] += av * db[base + static_cast<std::size_t>(j)];
                }
            }
        }
    }
    auto& counter = OpCounter::get();
    counter.mults += static_cast<std::uint64_t>(m * k * n);
    counter.adds += static_cast<std::uint64_t>(m * k * n);

    auto node = make_node({m, n}, std::move(out), false);
    if (!any_requires_grad({&a, &b})) return Tensor(std::move(node));
    auto pa = a.handle();
    auto pb = b.handle();
    return finish(std::move(node), true, {pa, pb},
                  [pa, pb, m, n, k, trans_a, trans_b](Node& self) {
                      auto& counter = OpCounter::get();
                      const std::int64_t lda = pa->shape[1];
                      const std::int64_t ldb = pb->shape[1];
                      const auto& g = self.grad;
                      if (pa->requires_grad) {
                          pa->ensure_grad();
                          // dA[i,kk] (logical, pre-transpose) = sum_j g[i,j] * B[kk,j]
                          for (std::int64_t i = 0; i < m; ++i) {
                              for (std::int64_t kk = 0; kk < k; ++kk) {
                                  double acc = 0.0;
                                  for (std::int64_t j = 0; j < n; ++j) {
                                      const double bv =
                                          trans_b ? pb->data[static_cast<std::size_t>(j * ldb + kk)]
                                                  : pb->data[static_cast<std::size_t>(kk * ldb + j)];
                                      acc += g[static_cast<std::size_t>(i * n + j)] * bv;
                                  }
                                  const std::size_t idx =
                                      trans_a ? static_cast<std::size_t>(kk * lda + i)
                                              : static_cast<std::size_t>(i * lda + kk);
                                  pa->grad[idx] += acc;
                              }
                          }
                          counter.mults += static_cast<std::uint64_t>(m * k * n);
                          counter.adds += static_cast<std::uint64_t>(m * k * n);
                      }
                      if (pb->requires_grad) {
                          pb->ensure_grad();
                          // dB[kk,j] (logical) = sum_i A[i,kk] * g[i,j]
                          for (std::int64_t kk = 0; kk < k; ++kk) {
                              for (std::int64_t j = 0; j < n; ++j) {
                                  double acc = 0.0;
                                  for (std::int64_t i = 0; i < m; ++i) {
                                      const double av =
                                          trans_a ? pa->data[static_cast<std::size_t>(kk * lda + i)]
                                                  : pa->data[static_cast<std::size_t>(i * lda + kk)];
                                      acc += av * g[static_cast<std::size_t>(i * n + j)];
                                  }
                                  const std::size_t idx =
                                      trans_b ? static_cast<std::size_t>(j * ldb + kk)
                                              : static_cast<std::size_t>(kk * ldb + j);
                                  pb->grad[idx] += acc;
                              }
                          }
                          counter.mults += static_cast<std::uint64_t>(m * k * n);
                          counter.adds += static_cast<std::uint64_t>(m * k * n);
                      }
                  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_defined(x, "linear");
    check_defined(w, "linear");
    if (w.rank() != 2) throw ShapeError("linear weight must be rank 2");
    const std::int64_t k = x.shape().back();
    if (k != w.dim(0)) {
        throw ShapeError("linear: input features " + shape_to_string(x.shape()) +
                         " do not match weight " + shape_to_string(w.shape()));
    }
    const std::int64_t rows = x.numel() / k;
    Tensor flat = reshape(x, {rows, k});
    Tensor y = matmul(flat, w);
    if (b.defined()) {
        if (b.numel() != w.dim(1)) throw ShapeError("linear: bias size mismatch");
        y = add(y, reshape(b, {1, w.dim(1)}));
    }
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    out_shape.push_back(w.dim(1));
    return reshape(y, std::move(out_shape));
}

Tensor linear(const Tensor& x, const Tensor& w) { return linear(x, w, Tensor()); }

// ---- reductions ----

namespace {

enum class RedKind { Sum, Mean, Min, Max };

Tensor reduce_op(const Tensor& x, int axis, bool keepdim, RedKind kind) {
    check_defined(x, "reduction");
    const auto v = axis_view(x.shape(), axis);
    const auto dx = x.data();
    const std::int64_t out_n = v.outer * v.inner;
    std::vector<double> out(static_cast<std::size_t>(out_n));
    std::vector<std::int64_t> arg;  // first attaining index for min/max
    const bool extremum = kind == RedKind::Min || kind == RedKind::Max;
    if (extremum) arg.assign(static_cast<std::size_t>(out_n), 0);
    auto& counter = OpCounter::get();
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
            const std::size_t oi = static_cast<std::size_t>(o * v.inner + in);
            if (extremum) {
                double best = dx[static_cast<std::size_t>(o * v.k * v.inner + in)];
                std::int64_t best_i = 0;
                for (std::int64_t kk = 1; kk < v.k; ++kk) {
                    const double val = dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)];
                    const bool better = kind == RedKind::Max ? val > best : val < best;
                    if (better) {
                        best = val;
                        best_i = kk;
                    }
                }
                out[oi] = best;
                arg[oi] = best_i;
            } else {
                double acc = 0.0;
                for (std::int64_t kk = 0; kk < v.k; ++kk) {
                    acc += dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)];
                }
                if (kind == RedKind::Mean) acc /= static_cast<double>(v.k);
                out[oi] = acc;
            }
        }
    }
    if (!extremum) {
        counter.adds += static_cast<std::uint64_t>(x.numel());
        if (kind == RedKind::Mean) counter.mults += static_cast<std::uint64_t>(out_n);
    }
    const Shape out_shape = keepdim ? v.kept : v.reduced;
    auto node = make_node(out_shape, std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px},
                  [px, v, kind, arg = std::move(arg)](Node& self) {
                      px->ensure_grad();
                      auto& counter = OpCounter::get();
                      for (std::int64_t o = 0; o < v.outer; ++o) {
                          for (std::int64_t in = 0; in < v.inner; ++in) {
                              const std::size_t oi = static_cast<std::size_t>(o * v.inner + in);
                              const double g = self.grad[oi];
                              switch (kind) {
                                  case RedKind::Sum:
                                      for (std::int64_t kk = 0; kk < v.k; ++kk) {
                                          px->grad[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)] += g;
                                      }
                                      break;
                                  case RedKind::Mean: {
                                      const double gk = g / static_cast<double>(v.k);
                                      for (std::int64_t kk = 0; kk < v.k; ++kk) {
                                          px->grad[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)] += gk;
                                      }
                                      break;
                                  }
                                  case RedKind::Min:
                                  case RedKind::Max:
                                      px->grad[static_cast<std::size_t>((o * v.k + arg[oi]) * v.inner + in)] += g;
                                      break;
                              }
                          }
                      }
                      counter.adds += static_cast<std::uint64_t>(px->numel());
                  });
}

}  // namespace

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce_op(x, axis, keepdim, RedKind::Sum); }
Tensor mean(const Tensor& x, int axis, bool keepdim) { return reduce_op(x, axis, keepdim, RedKind::Mean); }
Tensor min(const Tensor& x, int axis, bool keepdim) { return reduce_op(x, axis, keepdim, RedKind::Min); }
Tensor max(const Tensor& x, int axis, bool keepdim) { return reduce_op(x, axis, keepdim, RedKind::Max); }

Tensor sum_all(const Tensor& x) {
    Tensor flat = reshape(x, {x.numel()});
    return reduce_op(flat, 0, false, RedKind::Sum);
}

Tensor mean_all(const Tensor& x) {
    Tensor flat = reshape(x, {x.numel()});
    return reduce_op(flat, 0, false, RedKind::Mean);
}

std::vector<std::int64_t> argmax(const Tensor& x, int axis) {
    const auto v = axis_view(x.shape(), axis);
    const auto dx = x.data();
    std::vector<std::int64_t> out(static_cast<std::size_t>(v.outer * v.inner), 0);
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
            double best = dx[static_cast<std::size_t>(o * v.k * v.inner + in)];
            std::int64_t best_i = 0;
            for (std::int64_t kk = 1; kk < v.k; ++kk) {
                const double val = dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)];
                if (val > best) {
                    best = val;
                    best_i = kk;
                }
            }
            out[static_cast<std::size_t>(o * v.inner + in)] = best_i;
        }
    }
    return out;
}

// ---- softmax family ----

Tensor softmax(const Tensor& x, int axis) {
    check_defined(x, "softmax");
    for (double val : x.data()) {
        if (!std::isfinite(val)) throw NumericError("softmax: non-finite input");
    }
    const auto v = axis_view(x.shape(), axis);
    const auto dx = x.data();
    std::vector<double> out(dx.size());
    auto& counter = OpCounter::get();
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
            double mx = dx[static_cast<std::size_t>(o * v.k * v.inner + in)];
            for (std::int64_t kk = 1; kk < v.k; ++kk) {
                mx = std::max(mx, dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)]);
            }
            double denom = 0.0;
            for (std::int64_t kk = 0; kk < v.k; ++kk) {
                const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                const double e = std::exp(dx[idx] - mx);
                out[idx] = e;
                denom += e;
            }
            for (std::int64_t kk = 0; kk < v.k; ++kk) {
                out[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)] /= denom;
            }
        }
    }
    counter.exps += static_cast<std::uint64_t>(x.numel());
    counter.adds += 2 * static_cast<std::uint64_t>(x.numel());
    counter.mults += static_cast<std::uint64_t>(x.numel());
    auto node = make_node(x.shape(), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, v](Node& self) {
        // g_h = a * (g_a - sum(g_a * a))
        px->ensure_grad();
        auto& counter = OpCounter::get();
        for (std::int64_t o = 0; o < v.outer; ++o) {
            for (std::int64_t in = 0; in < v.inner; ++in) {
                double dot = 0.0;
                for (std::int64_t kk = 0; kk < v.k; ++kk) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                    dot += self.grad[idx] * self.data[idx];
                }
                for (std::int64_t kk = 0; kk < v.k; ++kk) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                    px->grad[idx] += self.data[idx] * (self.grad[idx] - dot);
                }
            }
        }
        counter.mults += 2 * static_cast<std::uint64_t>(self.data.size());
        counter.adds += 3 * static_cast<std::uint64_t>(self.data.size());
    });
}

Tensor log_sum_exp(const Tensor& x, int axis, bool keepdim) {
    check_defined(x, "log_sum_exp");
    for (double val : x.data()) {
        if (std::isnan(val)) throw NumericError("log_sum_exp: NaN input");
    }
    const auto v = axis_view(x.shape(), axis);
    const auto dx = x.data();
    const std::int64_t out_n = v.outer * v.inner;
    std::vector<double> out(static_cast<std::size_t>(out_n));
    auto& counter = OpCounter::get();
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
            double mx = dx[static_cast<std::size_t>(o * v.k * v.inner + in)];
            for (std::int64_t kk = 1; kk < v.k; ++kk) {
                mx = std::max(mx, dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)]);
            }
            double acc = 0.0;
            for (std::int64_t kk = 0; kk < v.k; ++kk) {
                acc += std::exp(dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)] - mx);
            }
            out[static_cast<std::size_t>(o * v.inner + in)] = mx + std::log(acc);
        }
    }
    counter.exps += static_cast<std::uint64_t>(x.numel()) + static_cast<std::uint64_t>(out_n);
    counter.adds += 2 * static_cast<std::uint64_t>(x.numel());
    auto node = make_node(keepdim ? v.kept : v.reduced, std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, v](Node& self) {
        // d lse / dx_i = softmax(x)_i, recomputed from the saved output.
        px->ensure_grad();
        auto& counter = OpCounter::get();
        for (std::int64_t o = 0; o < v.outer; ++o) {
            for (std::int64_t in = 0; in < v.inner; ++in) {
                const std::size_t oi = static_cast<std::size_t>(o * v.inner + in);
                const double lse = self.data[oi];
                const double g = self.grad[oi];
                for (std::int64_t kk = 0; kk < v.k; ++kk) {
                    const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                    px->grad[idx] += g * std::exp(px->data[idx] - lse);
                }
            }
        }
        counter.exps += static_cast<std::uint64_t>(px->numel());
        counter.mults += static_cast<std::uint64_t>(px->numel());
        counter.adds += 2 * static_cast<std::uint64_t>(px->numel());
    });
}

Tensor l2_normalize(const Tensor& x, int axis, double eps) {
    check_defined(x, "l2_normalize");
    const auto v = axis_view(x.shape(), axis);
    const auto dx = x.data();
    std::vector<double> out(dx.size());
    auto& counter = OpCounter::get();
    for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t in = 0; in < v.inner; ++in) {
            double sq = 0.0;
            for (std::int64_t kk = 0; kk < v.k; ++kk) {
                const double val = dx[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)];
                sq += val * val;
            }
            const double norm = std::sqrt(sq);
            const double denom = norm > eps ? norm : eps;
            for (std::int64_t kk = 0; kk < v.k; ++kk) {
                const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                out[idx] = dx[idx] / denom;
            }
        }
    }
    counter.mults += 2 * static_cast<std::uint64_t>(x.numel());
    counter.adds += static_cast<std::uint64_t>(x.numel());
    counter.exps += static_cast<std::uint64_t>(v.outer * v.inner);  // sqrt
    auto node = make_node(x.shape(), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, v, eps](Node& self) {
        px->ensure_grad();
        auto& counter = OpCounter::get();
        for (std::int64_t o = 0; o < v.outer; ++o) {
            for (std::int64_t in = 0; in < v.inner; ++in) {
                double sq = 0.0;
                for (std::int64_t kk = 0; kk < v.k; ++kk) {
                    const double val = px->data[static_cast<std::size_t>((o * v.k + kk) * v.inner + in)];
                    sq += val * val;
                }
                const double norm = std::sqrt(sq);
                if (norm > eps) {
                    double dot = 0.0;
                    for (std::int64_t kk = 0; kk < v.k; ++kk) {
                        const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                        dot += self.grad[idx] * self.data[idx];
                    }
                    for (std::int64_t kk = 0; kk < v.k; ++kk) {
                        const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                        px->grad[idx] += (self.grad[idx] - self.data[idx] * dot) / norm;
                    }
                } else {
                    for (std::int64_t kk = 0; kk < v.k; ++kk) {
                        const std::size_t idx = static_cast<std::size_t>((o * v.k + kk) * v.inner + in);
                        px->grad[idx] += self.grad[idx] / eps;
                    }
                }
            }
        }
        counter.mults += 4 * static_cast<std::uint64_t>(px->numel());
        counter.adds += 3 * static_cast<std::uint64_t>(px->numel());
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_defined(x, "layer_norm");
    const std::int64_t k = x.shape().back();
    if (gamma.numel() != k || beta.numel() != k) {
        throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(k) + " elements");
    }
    const std::int64_t rows = x.numel() / k;
    const auto dx = x.data();
    const auto dg = gamma.data();
    const auto db = beta.data();
    std::vector<double> out(dx.size());
    auto& counter = OpCounter::get();
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r * k);
        double mu = 0.0;
        for (std::int64_t i = 0; i < k; ++i) mu += dx[base + static_cast<std::size_t>(i)];
        mu /= static_cast<double>(k);
        double var = 0.0;
        for (std::int64_t i = 0; i < k; ++i) {
            const double c = dx[base + static_cast<std::size_t>(i)] - mu;
            var += c * c;
        }
        var /= static_cast<double>(k);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        for (std::int64_t i = 0; i < k; ++i) {
            const double xh = (dx[base + static_cast<std::size_t>(i)] - mu) * inv_std;
            out[base + static_cast<std::size_t>(i)] =
                xh * dg[static_cast<std::size_t>(i)] + db[static_cast<std::size_t>(i)];
        }
    }
    counter.mults += 3 * static_cast<std::uint64_t>(x.numel());
    counter.adds += 4 * static_cast<std::uint64_t>(x.numel());
    counter.exps += static_cast<std::uint64_t>(rows);
    auto node = make_node(x.shape(), std::move(out), false);
    if (!any_requires_grad({&x, &gamma, &beta})) return Tensor(std::move(node));
    auto px = x.handle();
    auto pg = gamma.handle();
    auto pb = beta.handle();
    return finish(std::move(node), true, {px, pg, pb}, [px, pg, pb, k, rows, eps](Node& self) {
        auto& counter = OpCounter::get();
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const std::size_t base = static_cast<std::size_t>(r * k);
            double mu = 0.0;
            for (std::int64_t i = 0; i < k; ++i) mu += px->data[base + static_cast<std::size_t>(i)];
            mu /= static_cast<double>(k);
            double var = 0.0;
            for (std::int64_t i = 0; i < k; ++i) {
                const double c = px->data[base + static_cast<std::size_t>(i)] - mu;
                var += c * c;
            }
            var /= static_cast<double>(k);
            const double inv_std = 1.0 / std::sqrt(var + eps);
            double mean_gxh = 0.0, mean_gxh_xh = 0.0;
            for (std::int64_t i = 0; i < k; ++i) {
                const std::size_t idx = base + static_cast<std::size_t>(i);
                const double xh = (px->data[idx] - mu) * inv_std;
                const double gxh = self.grad[idx] * pg->data[static_cast<std::size_t>(i)];
                mean_gxh += gxh;
                mean_gxh_xh += gxh * xh;
                if (pg->requires_grad) pg->grad[static_cast<std::size_t>(i)] += self.grad[idx] * xh;
                if (pb->requires_grad) pb->grad[static_cast<std::size_t>(i)] += self.grad[idx];
            }
            mean_gxh /= static_cast<double>(k);
            mean_gxh_xh /= static_cast<double>(k);
            if (px->requires_grad) {
                for (std::int64_t i = 0; i < k; ++i) {
                    const std::size_t idx = base + static_cast<std::size_t>(i);
                    const double xh = (px->data[idx] - mu) * inv_std;
                    const double gxh = self.grad[idx] * pg->data[static_cast<std::size_t>(i)];
                    px->grad[idx] += inv_std * (gxh - mean_gxh - xh * mean_gxh_xh);
                }
            }
        }
        counter.mults += 8 * static_cast<std::uint64_t>(self.data.size());
        counter.adds += 8 * static_cast<std::uint64_t>(self.data.size());
    });
}

// ---- selection / masking ----

Tensor where(const Tensor& cond, const Tensor& a, const Tensor& b) {
    check_defined(cond, "where");
    check_defined(a, "where");
    check_defined(b, "where");
    const Shape out_shape = broadcast_shape(broadcast_shape(cond.shape(), a.shape()), b.shape());
    const auto sc = broadcast_strides(cond.shape(), out_shape);
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const std::int64_t n = shape_numel(out_shape);
    const auto dc = cond.data();
    const auto da = a.data();
    const auto db = b.data();
    std::vector<double> out(static_cast<std::size_t>(n));
    const std::size_t r = out_shape.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t oc = 0, oa = 0, ob = 0;
    for (std::int64_t flat = 0; flat < n; ++flat) {
        out[static_cast<std::size_t>(flat)] = dc[static_cast<std::size_t>(oc)] != 0.0
                                                  ? da[static_cast<std::size_t>(oa)]
                                                  : db[static_cast<std::size_t>(ob)];
        std::size_t axis = r;
        while (axis-- > 0) {
            ++idx[axis];
            oc += sc[axis];
            oa += sa[axis];
            ob += sb[axis];
            if (idx[axis] < out_shape[axis]) break;
            oc -= sc[axis] * out_shape[axis];
            oa -= sa[axis] * out_shape[axis];
            ob -= sb[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
    auto node = make_node(out_shape, std::move(out), false);
    if (!any_requires_grad({&a, &b})) return Tensor(std::move(node));
    auto pc = cond.handle();
    auto pa = a.handle();
    auto pb = b.handle();
    return finish(std::move(node), true, {pc, pa, pb},
                  [pc, pa, pb, out_shape, sc, sa, sb, n, r](Node& self) {
                      std::vector<double> ga, gb;
                      if (pa->requires_grad) ga.assign(static_cast<std::size_t>(n), 0.0);
                      if (pb->requires_grad) gb.assign(static_cast<std::size_t>(n), 0.0);
                      std::vector<std::int64_t> idx(r, 0);
                      std::int64_t oc = 0;
                      for (std::int64_t flat = 0; flat < n; ++flat) {
                          const bool take_a = pc->data[static_cast<std::size_t>(oc)] != 0.0;
                          if (take_a && pa->requires_grad) ga[static_cast<std::size_t>(flat)] = self.grad[static_cast<std::size_t>(flat)];
                          if (!take_a && pb->requires_grad) gb[static_cast<std::size_t>(flat)] = self.grad[static_cast<std::size_t>(flat)];
                          std::size_t axis = r;
                          while (axis-- > 0) {
                              ++idx[axis];
                              oc += sc[axis];
                              if (idx[axis] < out_shape[axis]) break;
                              oc -= sc[axis] * out_shape[axis];
                              idx[axis] = 0;
                          }
                      }
                      if (pa->requires_grad) {
                          pa->ensure_grad();
                          accumulate_broadcast(pa->grad, pa->shape, ga, out_shape);
                      }
                      if (pb->requires_grad) {
                          pb->ensure_grad();
                          accumulate_broadcast(pb->grad, pb->shape, gb, out_shape);
                      }
                  });
}

Tensor threshold_keep(const Tensor& x, double threshold) {
    check_defined(x, "threshold_keep");
    const auto dx = x.data();
    std::vector<double> out(dx.size());
    for (std::size_t i = 0; i < dx.size(); ++i) {
        out[i] = dx[i] >= threshold ? dx[i] : 0.0;
    }
    auto node = make_node(x.shape(), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, threshold](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
            if (px->data[i] >= threshold) px->grad[i] += self.grad[i];
        }
        OpCounter::get().adds += self.data.size();
    });
}

Tensor ge_mask(const Tensor& x, double threshold) {
    const auto dx = x.data();
    std::vector<double> out(dx.size());
    for (std::size_t i = 0; i < dx.size(); ++i) out[i] = dx[i] >= threshold ? 1.0 : 0.0;
    return Tensor(make_node(x.shape(), std::move(out), false));
}

Tensor eq_mask(const Tensor& a, const Tensor& b) {
    const auto m = make_broadcast(a.shape(), b.shape());
    const auto da = a.data();
    const auto db = b.data();
    std::vector<double> out(static_cast<std::size_t>(m.n));
    for_each_broadcast(m, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        out[static_cast<std::size_t>(o)] =
            da[static_cast<std::size_t>(ia)] == db[static_cast<std::size_t>(ib)] ? 1.0 : 0.0;
    });
    return Tensor(make_node(m.out, std::move(out), false));
}

// ---- shape surgery ----

Tensor reshape(const Tensor& x, Shape new_shape) {
    check_defined(x, "reshape");
    if (shape_numel(new_shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(new_shape));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    auto node = make_node(std::move(new_shape), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px](Node& self) {
        px->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        OpCounter::get().adds += self.grad.size();
    });
}

Tensor transpose2d(const Tensor& x) {
    check_defined(x, "transpose2d");
    if (x.rank() != 2) throw ShapeError("transpose2d expects rank 2");
    const std::int64_t r = x.dim(0), c = x.dim(1);
    const auto dx = x.data();
    std::vector<double> out(dx.size());
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) {
            out[static_cast<std::size_t>(j * r + i)] = dx[static_cast<std::size_t>(i * c + j)];
        }
    }
    auto node = make_node({c, r}, std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, r, c](Node& self) {
        px->ensure_grad();
        for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < c; ++j) {
                px->grad[static_cast<std::size_t>(i * c + j)] +=
                    self.grad[static_cast<std::size_t>(j * r + i)];
            }
        }
        OpCounter::get().adds += self.grad.size();
    });
}

Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t len) {
    check_defined(x, "slice_rows");
    if (x.rank() < 1) throw ShapeError("slice_rows expects rank >= 1");
    const std::int64_t rows = x.dim(0);
    if (start < 0 || len <= 0 || start + len > rows) {
        throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + std::to_string(rows));
    }
    const std::int64_t inner = x.numel() / rows;
    const auto dx = x.data();
    std::vector<double> out(static_cast<std::size_t>(len * inner));
    std::copy(dx.begin() + start * inner, dx.begin() + (start + len) * inner, out.begin());
    Shape out_shape = x.shape();
    out_shape[0] = len;
    auto node = make_node(std::move(out_shape), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, start, inner](Node& self) {
        px->ensure_grad();
        const std::size_t offset = static_cast<std::size_t>(start * inner);
        for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[offset + i] += self.grad[i];
        OpCounter::get().adds += self.grad.size();
    });
}

Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t len) {
    check_defined(x, "slice_last");
    const std::int64_t k = x.shape().back();
    if (start < 0 || len <= 0 || start + len > k) throw ShapeError("slice_last: range out of bounds");
    const std::int64_t rows = x.numel() / k;
    const auto dx = x.data();
    std::vector<double> out(static_cast<std::size_t>(rows * len));
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy(dx.begin() + r * k + start, dx.begin() + r * k + start + len,
                  out.begin() + r * len);
    }
    Shape out_shape = x.shape();
    out_shape.back() = len;
    auto node = make_node(std::move(out_shape), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, start, len, k, rows](Node& self) {
        px->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t j = 0; j < len; ++j) {
                px->grad[static_cast<std::size_t>(r * k + start + j)] +=
                    self.grad[static_cast<std::size_t>(r * len + j)];
            }
        }
        OpCounter::get().adds += self.grad.size();
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    std::int64_t rows = 0;
    std::vector<double> out;
    bool track = false;
    for (const auto& p : parts) {
        Shape ptail(p.shape().begin() + 1, p.shape().end());
        if (ptail != tail) throw ShapeError("concat_rows: inner shape mismatch");
        rows += p.dim(0);
        out.insert(out.end(), p.data().begin(), p.data().end());
        track = track || (g_grad_enabled && p.requires_grad());
    }
    Shape out_shape = parts[0].shape();
    out_shape[0] = rows;
    auto node = make_node(std::move(out_shape), std::move(out), false);
    if (!track) return Tensor(std::move(node));
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (const auto& p : parts) parents.push_back(p.handle());
    return finish(std::move(node), true, parents, [parents](Node& self) {
        std::size_t offset = 0;
        for (const auto& p : parents) {
            const std::size_t n = p->data.size();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) p->grad[i] += self.grad[offset + i];
                OpCounter::get().adds += n;
            }
            offset += n;
        }
    });
}

Tensor concat_last(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat_last: no parts");
    Shape head(parts[0].shape().begin(), parts[0].shape().end() - 1);
    const std::int64_t rows = shape_numel(head);
    std::int64_t total_k = 0;
    bool track = false;
    for (const auto& p : parts) {
        Shape phead(p.shape().begin(), p.shape().end() - 1);
        if (phead != head) throw ShapeError("concat_last: leading shape mismatch");
        total_k += p.shape().back();
        track = track || (g_grad_enabled && p.requires_grad());
    }
    std::vector<double> out(static_cast<std::size_t>(rows * total_k));
    std::int64_t col = 0;
    for (const auto& p : parts) {
        const std::int64_t k = p.shape().back();
        const auto dp = p.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            std::copy(dp.begin() + r * k, dp.begin() + (r + 1) * k,
                      out.begin() + r * total_k + col);
        }
        col += k;
    }
    Shape out_shape = head;
    out_shape.push_back(total_k);
    auto node = make_node(std::move(out_shape), std::move(out), false);
    if (!track) return Tensor(std::move(node));
    std::vector<NodePtr> parents;
    for (const auto& p : parts) parents.push_back(p.handle());
    return finish(std::move(node), true, parents, [parents, rows, total_k](Node& self) {
        std::int64_t col = 0;
        for (const auto& p : parents) {
            const std::int64_t k = p->shape.back();
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t j = 0; j < k; ++j) {
                        p->grad[static_cast<std::size_t>(r * k + j)] +=
                            self.grad[static_cast<std::size_t>(r * total_k + col + j)];
                    }
                }
                OpCounter::get().adds += p->data.size();
            }
            col += k;
        }
    });
}

Tensor take_rows(const Tensor& x, std::span<const std::int64_t> indices) {
    check_defined(x, "take_rows");
    if (x.rank() < 1) throw ShapeError("take_rows expects rank >= 1");
    const std::int64_t rows = x.dim(0);
    const std::int64_t inner = x.numel() / rows;
    const auto dx = x.data();
    std::vector<double> out;
    out.reserve(indices.size() * static_cast<std::size_t>(inner));
    for (auto ix : indices) {
        if (ix < 0 || ix >= rows) {
            throw ShapeError("take_rows: index " + std::to_string(ix) + " out of " +
                             std::to_string(rows) + " rows");
        }
        out.insert(out.end(), dx.begin() + ix * inner, dx.begin() + (ix + 1) * inner);
    }
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<std::int64_t>(indices.size());
    auto node = make_node(std::move(out_shape), std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    std::vector<std::int64_t> ids(indices.begin(), indices.end());
    return finish(std::move(node), true, {px}, [px, ids = std::move(ids), inner](Node& self) {
        px->ensure_grad();
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const std::size_t src = r * static_cast<std::size_t>(inner);
            const std::size_t dst = static_cast<std::size_t>(ids[r] * inner);
            for (std::int64_t j = 0; j < inner; ++j) {
                px->grad[dst + static_cast<std::size_t>(j)] += self.grad[src + static_cast<std::size_t>(j)];
            }
        }
        OpCounter::get().adds += self.grad.size();
    });
}

Tensor diag(const Tensor& x) {
    check_defined(x, "diag");
    if (x.rank() != 2 || x.dim(0) != x.dim(1)) {
        throw ShapeError("diag expects a square matrix, got " + shape_to_string(x.shape()));
    }
    const std::int64_t n = x.dim(0);
    const auto dx = x.data();
    std::vector<double> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = dx[static_cast<std::size_t>(i * n + i)];
    auto node = make_node({n}, std::move(out), false);
    if (!any_requires_grad({&x})) return Tensor(std::move(node));
    auto px = x.handle();
    return finish(std::move(node), true, {px}, [px, n](Node& self) {
        px->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
            px->grad[static_cast<std::size_t>(i * n + i)] += self.grad[static_cast<std::size_t>(i)];
        }
        OpCounter::get().adds += static_cast<std::uint64_t>(n);
    });
}

Tensor stack_scalars(std::span<const Tensor> scalars, std::int64_t rows, std::int64_t cols) {
    if (static_cast<std::int64_t>(scalars.size()) != rows * cols) {
        throw ShapeError("stack_scalars: expected " + std::to_string(rows * cols) + " scalars");
    }
    std::vector<double> out(scalars.size());
    bool track = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].numel() != 1) throw ShapeError("stack_scalars: non-scalar entry");
        out[i] = scalars[i].data()[0];
        track = track || (g_grad_enabled && scalars[i].requires_grad());
    }
    auto node = make_node({rows, cols}, std::move(out), false);
    if (!track) return Tensor(std::move(node));
    std::vector<NodePtr> parents;
    parents.reserve(scalars.size());
    for (const auto& s : scalars) parents.push_back(s.handle());
    return finish(std::move(node), true, parents, [parents](Node& self) {
        for (std::size_t i = 0; i < parents.size(); ++i) {
            if (parents[i]->requires_grad) {
                parents[i]->ensure_grad();
                parents[i]->grad[0] += self.grad[i];
            }
        }
        OpCounter::get().adds += parents.size();
    });
}

Tensor pairwise_sum(std::span<const Tensor> scalars) {
    if (scalars.empty()) return Tensor::scalar(0.0);
    std::vector<Tensor> level(scalars.begin(), scalars.end());
    while (level.size() > 1) {
        std::vector<Tensor> next;
        next.reserve((level.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
            next.push_back(add(level[i], level[i + 1]));
        }
        if (level.size() % 2 == 1) next.push_back(level.back());
        level = std::move(next);
    }
    return level[0];
}

bool all_finite(const Tensor& x) {
    for (double v : x.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace alignlab
