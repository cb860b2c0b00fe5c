#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// A Tensor is a cheap shared handle onto a graph node; ops build a DAG
// eagerly and backward() walks it once in reverse topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace molmix {

enum class Precision { F32, F64 };

inline std::size_t precision_bytes(Precision p) { return p == Precision::F32 ? 4 : 8; }

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Tracks live element counts of tensor allocations while attached to the
// current thread (see MeterScope). Used by the attention benchmarks.
struct ScratchMeter {
    std::size_t current = 0;
    std::size_t peak = 0;
    bool paused = false;

    void on_alloc(std::size_t n) {
        current += n;
        if (current > peak) peak = current;
    }
    void on_release(std::size_t n) { current -= n; }
};

namespace detail {
std::shared_ptr<ScratchMeter>& active_meter();
}

// Attaches a meter to the current thread for the scope's lifetime.
class MeterScope {
public:
    explicit MeterScope(std::shared_ptr<ScratchMeter> meter);
    ~MeterScope();
    MeterScope(const MeterScope&) = delete;
    MeterScope& operator=(const MeterScope&) = delete;

private:
    std::shared_ptr<ScratchMeter> previous_;
};

// Pauses metering (allocations in scope are not counted).
class MeterPause {
public:
    MeterPause();
    ~MeterPause();
    MeterPause(const MeterPause&) = delete;
    MeterPause& operator=(const MeterPause&) = delete;

private:
    std::shared_ptr<ScratchMeter> meter_;
    bool was_paused_ = false;
};

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
    std::shared_ptr<ScratchMeter> meter;
    std::size_t metered = 0;

    TensorNode(Shape s, std::vector<S> d, bool rg);
    ~TensorNode();
    void ensure_grad();
};

template <typename S>
class Tensor {
public:
    using Scalar = S;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, S value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<S> data, bool requires_grad = false);
    static Tensor scalar_value(S value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape[i]; }
    // Rowwise view: all leading dimensions collapse into rows.
    std::size_t row_width() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
    std::size_t row_count() const { return numel() / row_width(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::span<const S> data() const { return {node_->data.data(), node_->data.size()}; }
    std::span<S> mutable_data() { return {node_->data.data(), node_->data.size()}; }
    S item() const;

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const S> grad() const;
    void zero_grad();

    // Seeds d(self)/d(self) = 1 and accumulates gradients into every
    // requires_grad leaf. self must hold exactly one element.
    void backward() const;

    TensorNode<S>* node() const { return node_.get(); }
    std::shared_ptr<TensorNode<S>> shared_node() const { return node_; }

    static Tensor wrap(std::shared_ptr<TensorNode<S>> node) {
        Tensor t;
        t.node_ = std::move(node);
        return t;
    }

private:
    std::shared_ptr<TensorNode<S>> node_;
};

// ---- elementwise ----
template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& x, S factor);
template <typename S> Tensor<S> add_scalar(const Tensor<S>& x, S value);
template <typename S> Tensor<S> relu(const Tensor<S>& x);
// ln(0.5 e^x + 0.5); smooth everywhere, ssp(0) = 0.
template <typename S> Tensor<S> softplus_shifted(const Tensor<S>& x);
template <typename S> Tensor<S> abs_val(const Tensor<S>& x);
// y = s[0] * x where s is a one-element tensor participating in the graph.
template <typename S> Tensor<S> scalar_mul(const Tensor<S>& x, const Tensor<S>& s);

// ---- linear algebra ----
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
// alpha * a @ b^T for a [m x k], b [n x k].
template <typename S> Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b, S alpha = S(1));
// bias [d] broadcast over rows of x [... x d].
template <typename S> Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias);
// constant per-row factors (not differentiated w.r.t. the factors).
template <typename S> Tensor<S> scale_rows(const Tensor<S>& x, std::vector<S> factors);

// ---- normalization / attention pieces ----
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps);
template <typename S> Tensor<S> softmax_rowwise(const Tensor<S>& x);

// ---- indexing / reshaping ----
template <typename S>
Tensor<S> scatter_sum(const Tensor<S>& values, std::vector<std::size_t> index, std::size_t out_size);
template <typename S> Tensor<S> gather_rows(const Tensor<S>& x, std::vector<std::size_t> index);
template <typename S> Tensor<S> slice_rows(const Tensor<S>& x, std::size_t begin, std::size_t count);
template <typename S> Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t count);
template <typename S> Tensor<S> concat_rows(std::span<const Tensor<S>> parts);
template <typename S> Tensor<S> concat_cols(std::span<const Tensor<S>> parts);

// ---- reductions ----
template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);

// ---- initialization ----
// Uniform Glorot over [-limit, limit], limit = sqrt(6 / (fan_in + fan_out)).
template <typename S>
Tensor<S> glorot_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// ---- custom ops ----
// Builds a graph node from externally computed data with a hand-written
// backward pass. backward_fn sees self.grad filled and accumulates into
// self.parents (inputs, in the order given).
template <typename S>
Tensor<S> make_custom_op(Shape shape, std::vector<S> data,
                         std::initializer_list<const Tensor<S>*> inputs,
                         std::function<void(TensorNode<S>&)> backward_fn);

// ---- raw kernels (exposed for hand-written backward passes) ----
namespace kernels {
// c[m x n] = beta * c + alpha * a[m x k] @ b[k x n]
template <typename S>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c,
             S alpha = S(1), S beta = S(0));
// c[m x n] = beta * c + alpha * a[m x k] @ b[n x k]^T
template <typename S>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c,
             S alpha = S(1), S beta = S(0));
// c[k x n] = beta * c + alpha * a[m x k]^T @ b[m x n]
template <typename S>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const S* a, const S* b, S* c,
             S alpha = S(1), S beta = S(0));
}  // namespace kernels

// ---- checkpoint container ----
// Flat binary file: 16-byte header (magic "MOLMIXTC", u32 version, u16 scalar
// width in bytes, u16 reserved) followed by entries of u32 name length,
// UTF-8 name, u64 element count, little-endian scalars.
template <typename S>
struct NamedTensor {
    std::string name;
    Tensor<S> tensor;
};

template <typename S>
void save_checkpoint(const std::string& path, std::span<const NamedTensor<S>> params);
template <typename S>
std::map<std::string, std::vector<S>> load_checkpoint_arrays(const std::string& path);

}  // namespace molmix
