#include "molmix/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace molmix {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

namespace detail {
std::shared_ptr<ScratchMeter>& active_meter() {
    static thread_local std::shared_ptr<ScratchMeter> meter;
    return meter;
}
}  // namespace detail

MeterScope::MeterScope(std::shared_ptr<ScratchMeter> meter) {
    previous_ = detail::active_meter();
    detail::active_meter() = std::move(meter);
}

MeterScope::~MeterScope() { detail::active_meter() = std::move(previous_); }

MeterPause::MeterPause() {
    meter_ = detail::active_meter();
    if (meter_) {
        was_paused_ = meter_->paused;
        meter_->paused = true;
    }
}

MeterPause::~MeterPause() {
    if (meter_) meter_->paused = was_paused_;
}

template <typename S>
TensorNode<S>::TensorNode(Shape s, std::vector<S> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    auto& m = detail::active_meter();
    if (m && !m->paused) {
        meter = m;
        metered = data.size();
        meter->on_alloc(metered);
    }
}

template <typename S>
TensorNode<S>::~TensorNode() {
    if (meter) meter->on_release(metered);
}

template <typename S>
void TensorNode<S>::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), S(0));
}

namespace {

[[noreturn]] void dimension_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_to_string(a) + " and " +
                                shape_to_string(b));
}

template <typename S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape, std::vector<S> data, bool rg) {
    return std::make_shared<TensorNode<S>>(std::move(shape), std::move(data), rg);
}

template <typename S>
bool any_requires_grad(std::initializer_list<const Tensor<S>*> ts) {
    for (const auto* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

// Wires parents + backward_fn onto a freshly created result node when any
// input needs gradients; otherwise leaves the node as a detached constant.
template <typename S, typename Fn>
Tensor<S> attach(std::shared_ptr<TensorNode<S>> node,
                 std::initializer_list<const Tensor<S>*> inputs, Fn&& fn) {
    bool rg = false;
    for (const auto* t : inputs) rg = rg || t->requires_grad();
    if (rg) {
        node->requires_grad = true;
        for (const auto* t : inputs) node->parents.push_back(t->shared_node());
        node->backward_fn = std::forward<Fn>(fn);
    }
    return Tensor<S>::wrap(std::move(node));
}

}  // namespace

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return wrap(make_node<S>(std::move(shape), std::vector<S>(n, S(0)), requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return wrap(make_node<S>(std::move(shape), std::vector<S>(n, value), requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::from_data(Shape shape, std::vector<S> data, bool requires_grad) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("from_data: shape " + shape_to_string(shape) + " needs " +
                                    std::to_string(shape_numel(shape)) + " elements, got " +
                                    std::to_string(data.size()));
    return wrap(make_node<S>(std::move(shape), std::move(data), requires_grad));
}

template <typename S>
Tensor<S> Tensor<S>::scalar_value(S value) {
    return from_data({1}, {value});
}

template <typename S>
S Tensor<S>::item() const {
    if (numel() != 1)
        throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

template <typename S>
std::span<const S> Tensor<S>::grad() const {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
}

template <typename S>
void Tensor<S>::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
}

template <typename S>
void Tensor<S>::backward() const {
    if (numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_to_string(shape()));
    // Iterative post-order DFS; each node visited exactly once.
    std::vector<TensorNode<S>*> order;
    std::unordered_set<TensorNode<S>*> seen;
    struct Frame {
        TensorNode<S>* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& frame = stack.back();
        if (frame.next_parent < frame.node->parents.size()) {
            TensorNode<S>* parent = frame.node->parents[frame.next_parent++].get();
            if (parent->requires_grad && seen.insert(parent).second)
                stack.push_back({parent, 0});
        } else {
            order.push_back(frame.node);
            stack.pop_back();
        }
    }
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

template <typename S>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c, S alpha,
             S beta) {
    for (std::size_t i = 0; i < m; ++i) {
        S* ci = c + i * n;
        if (beta == S(0)) {
            std::fill(ci, ci + n, S(0));
        } else if (beta != S(1)) {
            for (std::size_t j = 0; j < n; ++j) ci[j] *= beta;
        }
        const S* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = alpha * ai[p];
            const S* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

template <typename S>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c, S alpha,
             S beta) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        S* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const S* bj = b + j * k;
            S acc = S(0);
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] = beta * ci[j] + alpha * acc;
        }
    }
}

template <typename S>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c, S alpha,
             S beta) {
    if (beta == S(0)) {
        std::fill(c, c + k * n, S(0));
    } else if (beta != S(1)) {
        for (std::size_t idx = 0; idx < k * n; ++idx) c[idx] *= beta;
    }
    for (std::size_t i = 0; i < m; ++i) {
        const S* ai = a + i * k;
        const S* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = alpha * ai[p];
            S* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
        }
    }
}

template void gemm_nn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                             float*, float, float);
template void gemm_nn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*,
                              double*, double, double);
template void gemm_nt<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                             float*, float, float);
template void gemm_nt<double>(std::size_t, std::size_t, std::size_t, const double*, const double*,
                              double*, double, double);
template void gemm_tn<float>(std::size_t, std::size_t, std::size_t, const float*, const float*,
                             float*, float, float);
template void gemm_tn<double>(std::size_t, std::size_t, std::size_t, const double*, const double*,
                              double*, double, double);

}  // namespace kernels

// ---------------------------------------------------------------------------
// elementwise ops

namespace {

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> binary_elementwise(const char* name, const Tensor<S>& a, const Tensor<S>& b, FwdFn fwd,
                             BwdFn bwd) {
    if (a.shape() != b.shape()) dimension_error(name, a.shape(), b.shape());
    std::vector<S> out(a.numel());
    auto da = a.data();
    auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i], db[i]);
    auto node = make_node<S>(a.shape(), std::move(out), false);
    return attach(std::move(node), {&a, &b}, bwd);
}

}  // namespace

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_elementwise<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [](TensorNode<S>& self) {
            for (auto& parent : self.parents) {
                if (!parent->requires_grad) continue;
                parent->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) parent->grad[i] += self.grad[i];
            }
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_elementwise<S>(
        "sub", a, b, [](S x, S y) { return x - y; },
        [](TensorNode<S>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_elementwise<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [](TensorNode<S>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->data[i];
            }
        });
}

namespace {

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> unary_elementwise(const Tensor<S>& x, FwdFn fwd, BwdFn bwd) {
    std::vector<S> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(dx[i]);
    auto node = make_node<S>(x.shape(), std::move(out), false);
    return attach(std::move(node), {&x}, bwd);
}

}  // namespace

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
    return unary_elementwise<S>(
        x, [factor](S v) { return v * factor; },
        [factor](TensorNode<S>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i] * factor;
        });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S value) {
    return unary_elementwise<S>(
        x, [value](S v) { return v + value; },
        [](TensorNode<S>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    return unary_elementwise<S>(
        x, [](S v) { return v > S(0) ? v : S(0); },
        [](TensorNode<S>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (p->data[i] > S(0)) p->grad[i] += self.grad[i];
        });
}

template <typename S>
Tensor<S> softplus_shifted(const Tensor<S>& x) {
    // ln(0.5 e^x + 0.5) = softplus(x) - ln 2, computed stably.
    auto ssp = [](S v) {
        S sp = v > S(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        return sp - S(M_LN2);
    };
    return unary_elementwise<S>(x, ssp, [](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const S v = p->data[i];
            const S sig = v > S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
            p->grad[i] += self.grad[i] * sig;
        }
    });
}

template <typename S>
Tensor<S> abs_val(const Tensor<S>& x) {
    return unary_elementwise<S>(
        x, [](S v) { return std::abs(v); },
        [](TensorNode<S>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const S v = p->data[i];
                if (v > S(0))
                    p->grad[i] += self.grad[i];
                else if (v < S(0))
                    p->grad[i] -= self.grad[i];
            }
        });
}

template <typename S>
Tensor<S> scalar_mul(const Tensor<S>& x, const Tensor<S>& s) {
    if (s.numel() != 1)
        throw std::invalid_argument("scalar_mul: scale tensor must hold one element, got shape " +
                                    shape_to_string(s.shape()));
    const S factor = s.data()[0];
    std::vector<S> out(x.numel());
    auto dx = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
    auto node = make_node<S>(x.shape(), std::move(out), false);
    return attach(std::move(node), {&x, &s}, [factor](TensorNode<S>& self) {
        auto& px = self.parents[0];
        auto& ps = self.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                px->grad[i] += self.grad[i] * factor;
        }
        if (ps->requires_grad) {
            ps->ensure_grad();
            S acc = S(0);
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                acc += self.grad[i] * px->data[i];
            ps->grad[0] += acc;
        }
    });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        dimension_error("matmul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<S> out(m * n);
    kernels::gemm_nn<S>(m, k, n, a.data().data(), b.data().data(), out.data());
    auto node = make_node<S>({m, n}, std::move(out), false);
    return attach(std::move(node), {&a, &b}, [m, k, n](TensorNode<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();  // dA += dC @ B^T
            kernels::gemm_nt<S>(m, n, k, self.grad.data(), pb->data.data(), pa->grad.data(), S(1),
                                S(1));
        }
        if (pb->requires_grad) {
            pb->ensure_grad();  // dB += A^T @ dC
            kernels::gemm_tn<S>(m, k, n, pa->data.data(), self.grad.data(), pb->grad.data(), S(1),
                                S(1));
        }
    });
}

template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b, S alpha) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1))
        dimension_error("matmul_nt", a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<S> out(m * n);
    kernels::gemm_nt<S>(m, k, n, a.data().data(), b.data().data(), out.data(), alpha);
    auto node = make_node<S>({m, n}, std::move(out), false);
    return attach(std::move(node), {&a, &b}, [m, k, n, alpha](TensorNode<S>& self) {
        auto& pa = self.parents[0];
        auto& pb = self.parents[1];
        if (pa->requires_grad) {
            pa->ensure_grad();  // dA += alpha * dC @ B
            kernels::gemm_nn<S>(m, n, k, self.grad.data(), pb->data.data(), pa->grad.data(), alpha,
                                S(1));
        }
        if (pb->requires_grad) {
            pb->ensure_grad();  // dB += alpha * dC^T @ A
            kernels::gemm_tn<S>(m, n, k, self.grad.data(), pa->data.data(), pb->grad.data(), alpha,
                                S(1));
        }
    });
}

template <typename S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
    const std::size_t d = x.row_width();
    if (bias.numel() != d) dimension_error("add_bias", x.shape(), bias.shape());
    const std::size_t rows = x.row_count();
    std::vector<S> out(x.numel());
    auto dx = x.data();
    auto db = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = dx[r * d + j] + db[j];
    auto node = make_node<S>(x.shape(), std::move(out), false);
    return attach(std::move(node), {&x, &bias}, [rows, d](TensorNode<S>& self) {
        auto& px = self.parents[0];
        auto& pb = self.parents[1];
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) pb->grad[j] += self.grad[r * d + j];
        }
    });
}

template <typename S>
Tensor<S> scale_rows(const Tensor<S>& x, std::vector<S> factors) {
    const std::size_t rows = x.row_count(), d = x.row_width();
    if (factors.size() != rows)
        throw std::invalid_argument("scale_rows: got " + std::to_string(factors.size()) +
                                    " factors for " + std::to_string(rows) + " rows");
    std::vector<S> out(x.numel());
    auto dx = x.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = dx[r * d + j] * factors[r];
    auto node = make_node<S>(x.shape(), std::move(out), false);
    return attach(std::move(node), {&x},
                  [rows, d, factors = std::move(factors)](TensorNode<S>& self) {
                      auto& p = self.parents[0];
                      p->ensure_grad();
                      for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < d; ++j)
                              p->grad[r * d + j] += self.grad[r * d + j] * factors[r];
                  });
}

// ---------------------------------------------------------------------------
// normalization / attention pieces

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
    const std::size_t d = x.row_width();
    if (gamma.numel() != d) dimension_error("layer_norm", x.shape(), gamma.shape());
    if (beta.numel() != d) dimension_error("layer_norm", x.shape(), beta.shape());
    const std::size_t rows = x.row_count();
    std::vector<S> out(x.numel());
    // Normalized values are recomputed in backward from these.
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    auto means = std::make_shared<std::vector<S>>(rows);
    auto dx = x.data();
    auto dg = gamma.data();
    auto db = beta.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = dx.data() + r * d;
        S mu = S(0);
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= S(d);
        S var = S(0);
        for (std::size_t j = 0; j < d; ++j) {
            const S c = row[j] - mu;
            var += c * c;
        }
        var /= S(d);
        const S is = S(1) / std::sqrt(var + eps);
        (*means)[r] = mu;
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < d; ++j)
            out[r * d + j] = (row[j] - mu) * is * dg[j] + db[j];
    }
    auto node = make_node<S>(x.shape(), std::move(out), false);
    return attach(std::move(node), {&x, &gamma, &beta},
                  [rows, d, inv_std, means](TensorNode<S>& self) {
                      auto& px = self.parents[0];
                      auto& pg = self.parents[1];
                      auto& pb = self.parents[2];
                      std::vector<S> xhat(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                          const S* xrow = px->data.data() + r * d;
                          const S* grow = self.grad.data() + r * d;
                          const S is = (*inv_std)[r];
                          const S mu = (*means)[r];
                          for (std::size_t j = 0; j < d; ++j) xhat[j] = (xrow[j] - mu) * is;
                          if (pg->requires_grad) {
                              pg->ensure_grad();
                              for (std::size_t j = 0; j < d; ++j)
                                  pg->grad[j] += grow[j] * xhat[j];
                          }
                          if (pb->requires_grad) {
                              pb->ensure_grad();
                              for (std::size_t j = 0; j < d; ++j) pb->grad[j] += grow[j];
                          }
                          if (px->requires_grad) {
                              px->ensure_grad();
                              // dxhat = dy * gamma; dx = is * (dxhat - mean(dxhat)
                              //                                 - xhat * mean(dxhat * xhat))
                              S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
                              for (std::size_t j = 0; j < d; ++j) {
                                  const S dxh = grow[j] * pg->data[j];
                                  mean_dxhat += dxh;
                                  mean_dxhat_xhat += dxh * xhat[j];
                              }
                              mean_dxhat /= S(d);
                              mean_dxhat_xhat /= S(d);
                              S* gxrow = px->grad.data() + r * d;
                              for (std::size_t j = 0; j < d; ++j) {
                                  const S dxh = grow[j] * pg->data[j];
                                  gxrow[j] += is * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                              }
                          }
                      }
                  });
}

template <typename S>
Tensor<S> softmax_rowwise(const Tensor<S>& x) {
    const std::size_t rows = x.row_count(), d = x.row_width();
    if (d == 0) throw std::invalid_argument("softmax_rowwise: empty rows");
    std::vector<S> out(x.numel());
    auto dx = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = dx.data() + r * d;
        S* orow = out.data() + r * d;
        S mx = row[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
        S denom = S(0);
        for (std::size_t j = 0; j < d; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        const S inv = S(1) / denom;
        for (std::size_t j = 0; j < d; ++j) orow[j] *= inv;
    }
    auto node = make_node<S>(x.shape(), std::move(out), false);
    return attach(std::move(node), {&x}, [rows, d](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const S* prow = self.data.data() + r * d;
            const S* grow = self.grad.data() + r * d;
            S dot = S(0);
            for (std::size_t j = 0; j < d; ++j) dot += prow[j] * grow[j];
            S* pg = p->grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) pg[j] += prow[j] * (grow[j] - dot);
        }
    });
}

// ---------------------------------------------------------------------------
// indexing / reshaping

template <typename S>
Tensor<S> scatter_sum(const Tensor<S>& values, std::vector<std::size_t> index,
                      std::size_t out_size) {
    const std::size_t rows = values.row_count(), d = values.row_width();
    if (index.size() != rows)
        throw std::invalid_argument("scatter_sum: " + std::to_string(index.size()) +
                                    " indices for " + std::to_string(rows) + " rows");
    for (std::size_t e = 0; e < index.size(); ++e)
        if (index[e] >= out_size)
            throw std::out_of_range("scatter_sum: index " + std::to_string(index[e]) +
                                    " at position " + std::to_string(e) + " >= out_size " +
                                    std::to_string(out_size));
    std::vector<S> out(out_size * d, S(0));
    auto dv = values.data();
    for (std::size_t e = 0; e < rows; ++e) {
        S* orow = out.data() + index[e] * d;
        const S* vrow = dv.data() + e * d;
        for (std::size_t j = 0; j < d; ++j) orow[j] += vrow[j];
    }
    auto node = make_node<S>({out_size, d}, std::move(out), false);
    return attach(std::move(node), {&values},
                  [rows, d, index = std::move(index)](TensorNode<S>& self) {
                      auto& p = self.parents[0];
                      p->ensure_grad();
                      for (std::size_t e = 0; e < rows; ++e) {
                          const S* grow = self.grad.data() + index[e] * d;
                          S* prow = p->grad.data() + e * d;
                          for (std::size_t j = 0; j < d; ++j) prow[j] += grow[j];
                      }
                  });
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<std::size_t> index) {
    const std::size_t rows = x.row_count(), d = x.row_width();
    for (std::size_t i = 0; i < index.size(); ++i)
        if (index[i] >= rows)
            throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) +
                                    " at position " + std::to_string(i) + " >= row count " +
                                    std::to_string(rows));
    std::vector<S> out(index.size() * d);
    auto dx = x.data();
    for (std::size_t i = 0; i < index.size(); ++i)
        std::copy_n(dx.data() + index[i] * d, d, out.data() + i * d);
    const std::size_t n = index.size();
    auto node = make_node<S>({n, d}, std::move(out), false);
    return attach(std::move(node), {&x}, [d, index = std::move(index)](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::size_t i = 0; i < index.size(); ++i) {
            const S* grow = self.grad.data() + i * d;
            S* prow = p->grad.data() + index[i] * d;
            for (std::size_t j = 0; j < d; ++j) prow[j] += grow[j];
        }
    });
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& x, std::size_t begin, std::size_t count) {
    const std::size_t rows = x.row_count(), d = x.row_width();
    if (begin + count > rows)
        throw std::out_of_range("slice_rows: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") exceeds " +
                                std::to_string(rows) + " rows");
    std::vector<S> out(count * d);
    std::copy_n(x.data().data() + begin * d, count * d, out.data());
    auto node = make_node<S>({count, d}, std::move(out), false);
    return attach(std::move(node), {&x}, [begin, d](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        S* dst = p->grad.data() + begin * d;
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t count) {
    const std::size_t rows = x.row_count(), d = x.row_width();
    if (begin + count > d)
        throw std::out_of_range("slice_cols: range [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") exceeds width " +
                                std::to_string(d));
    std::vector<S> out(rows * count);
    auto dx = x.data();
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(dx.data() + r * d + begin, count, out.data() + r * count);
    auto node = make_node<S>({rows, count}, std::move(out), false);
    return attach(std::move(node), {&x}, [rows, d, begin, count](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const S* grow = self.grad.data() + r * count;
            S* prow = p->grad.data() + r * d + begin;
            for (std::size_t j = 0; j < count; ++j) prow[j] += grow[j];
        }
    });
}

template <typename S>
Tensor<S> concat_rows(std::span<const Tensor<S>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t d = parts[0].row_width();
    std::size_t rows = 0;
    for (const auto& part : parts) {
        if (part.row_width() != d) dimension_error("concat_rows", parts[0].shape(), part.shape());
        rows += part.row_count();
    }
    std::vector<S> out(rows * d);
    std::size_t offset = 0;
    bool rg = false;
    for (const auto& part : parts) {
        std::copy_n(part.data().data(), part.numel(), out.data() + offset);
        offset += part.numel();
        rg = rg || part.requires_grad();
    }
    auto node = make_node<S>({rows, d}, std::move(out), rg);
    if (rg) {
        for (const auto& part : parts) node->parents.push_back(part.shared_node());
        node->backward_fn = [](TensorNode<S>& self) {
            std::size_t offset = 0;
            for (auto& p : self.parents) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    const S* src = self.grad.data() + offset;
                    for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += src[i];
                }
                offset += p->data.size();
            }
        };
    }
    return Tensor<S>::wrap(std::move(node));
}

template <typename S>
Tensor<S> concat_cols(std::span<const Tensor<S>> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t rows = parts[0].row_count();
    std::size_t d = 0;
    for (const auto& part : parts) {
        if (part.row_count() != rows) dimension_error("concat_cols", parts[0].shape(), part.shape());
        d += part.row_width();
    }
    std::vector<S> out(rows * d);
    std::size_t col = 0;
    bool rg = false;
    std::vector<std::size_t> widths;
    for (const auto& part : parts) {
        const std::size_t w = part.row_width();
        auto dp = part.data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(dp.data() + r * w, w, out.data() + r * d + col);
        col += w;
        widths.push_back(w);
        rg = rg || part.requires_grad();
    }
    auto node = make_node<S>({rows, d}, std::move(out), rg);
    if (rg) {
        for (const auto& part : parts) node->parents.push_back(part.shared_node());
        node->backward_fn = [rows, d, widths = std::move(widths)](TensorNode<S>& self) {
            std::size_t col = 0;
            for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
                auto& p = self.parents[pi];
                const std::size_t w = widths[pi];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t r = 0; r < rows; ++r) {
                        const S* src = self.grad.data() + r * d + col;
                        S* dst = p->grad.data() + r * w;
                        for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
                    }
                }
                col += w;
            }
        };
    }
    return Tensor<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc = S(0);
    for (S v : x.data()) acc += v;
    auto node = make_node<S>({1}, std::vector<S>{acc}, false);
    return attach(std::move(node), {&x}, [](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        const S g = self.grad[0];
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
    if (x.numel() == 0) throw std::invalid_argument("mean: empty tensor");
    S acc = S(0);
    for (S v : x.data()) acc += v;
    const S inv = S(1) / S(x.numel());
    auto node = make_node<S>({1}, std::vector<S>{acc * inv}, false);
    return attach(std::move(node), {&x}, [inv](TensorNode<S>& self) {
        auto& p = self.parents[0];
        p->ensure_grad();
        const S g = self.grad[0] * inv;
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

// ---------------------------------------------------------------------------
// initialization

template <typename S>
Tensor<S> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<S> data(fan_in * fan_out);
    for (auto& v : data) v = S(dist(rng));
    return Tensor<S>::from_data({fan_in, fan_out}, std::move(data), true);
}

// ---------------------------------------------------------------------------
// custom ops

template <typename S>
Tensor<S> make_custom_op(Shape shape, std::vector<S> data,
                         std::initializer_list<const Tensor<S>*> inputs,
                         std::function<void(TensorNode<S>&)> backward_fn) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("make_custom_op: shape/data size mismatch");
    auto node = make_node<S>(std::move(shape), std::move(data), false);
    bool rg = false;
    for (const auto* t : inputs) rg = rg || t->requires_grad();
    if (rg) {
        node->requires_grad = true;
        for (const auto* t : inputs) node->parents.push_back(t->shared_node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<S>::wrap(std::move(node));
}

// ---------------------------------------------------------------------------
// checkpoint container

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'O', 'L', 'M', 'I', 'X', 'T', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint container writes little-endian scalars directly");

template <typename T>
void write_pod(std::ostream& os, const T& value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

}  // namespace

template <typename S>
void save_checkpoint(const std::string& path, std::span<const NamedTensor<S>> params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    write_pod(os, kCheckpointVersion);
    write_pod(os, std::uint16_t(sizeof(S)));
    write_pod(os, std::uint16_t(0));
    for (const auto& p : params) {
        write_pod(os, std::uint32_t(p.name.size()));
        os.write(p.name.data(), std::streamsize(p.name.size()));
        write_pod(os, std::uint64_t(p.tensor.numel()));
        os.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                 std::streamsize(p.tensor.numel() * sizeof(S)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

template <typename S>
std::map<std::string, std::vector<S>> load_checkpoint_arrays(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));
    const auto scalar_size = read_pod<std::uint16_t>(is);
    read_pod<std::uint16_t>(is);
    if (scalar_size != sizeof(S))
        throw std::runtime_error("load_checkpoint: file stores " + std::to_string(scalar_size) +
                                 "-byte scalars, expected " + std::to_string(sizeof(S)));
    std::map<std::string, std::vector<S>> arrays;
    while (true) {
        std::uint32_t name_len;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw std::runtime_error("load_checkpoint: truncated entry header in " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto count = read_pod<std::uint64_t>(is);
        std::vector<S> values(count);
        is.read(reinterpret_cast<char*>(values.data()), std::streamsize(count * sizeof(S)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated array '" + name + "' in " +
                                          path);
        arrays.emplace(std::move(name), std::move(values));
    }
    return arrays;
}

// ---------------------------------------------------------------------------
// explicit instantiation

#define MOLMIX_INSTANTIATE_TENSOR(S)                                                              \
    template struct TensorNode<S>;                                                                \
    template class Tensor<S>;                                                                     \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                   \
    template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                   \
    template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                   \
    template Tensor<S> scale(const Tensor<S>&, S);                                                \
    template Tensor<S> add_scalar(const Tensor<S>&, S);                                           \
    template Tensor<S> relu(const Tensor<S>&);                                                    \
    template Tensor<S> softplus_shifted(const Tensor<S>&);                                        \
    template Tensor<S> abs_val(const Tensor<S>&);                                                 \
    template Tensor<S> scalar_mul(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                \
    template Tensor<S> matmul_nt(const Tensor<S>&, const Tensor<S>&, S);                          \
    template Tensor<S> add_bias(const Tensor<S>&, const Tensor<S>&);                              \
    template Tensor<S> scale_rows(const Tensor<S>&, std::vector<S>);                              \
    template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);       \
    template Tensor<S> softmax_rowwise(const Tensor<S>&);                                         \
    template Tensor<S> scatter_sum(const Tensor<S>&, std::vector<std::size_t>, std::size_t);      \
    template Tensor<S> gather_rows(const Tensor<S>&, std::vector<std::size_t>);                   \
    template Tensor<S> slice_rows(const Tensor<S>&, std::size_t, std::size_t);                    \
    template Tensor<S> slice_cols(const Tensor<S>&, std::size_t, std::size_t);                    \
    template Tensor<S> concat_rows(std::span<const Tensor<S>>);                                   \
    template Tensor<S> concat_cols(std::span<const Tensor<S>>);                                   \
    template Tensor<S> sum(const Tensor<S>&);                                                     \
    template Tensor<S> mean(const Tensor<S>&);                                                    \
    template Tensor<S> glorot_uniform(std::size_t, std::size_t, std::mt19937_64&);                \
    template Tensor<S> make_custom_op(Shape, std::vector<S>,                                      \
                                      std::initializer_list<const Tensor<S>*>,                    \
                                      std::function<void(TensorNode<S>&)>);                       \
    template void save_checkpoint(const std::string&, std::span<const NamedTensor<S>>);           \
    template std::map<std::string, std::vector<S>> load_checkpoint_arrays(const std::string&);

MOLMIX_INSTANTIATE_TENSOR(float)
MOLMIX_INSTANTIATE_TENSOR(double)

#undef MOLMIX_INSTANTIATE_TENSOR

}  // namespace molmix
