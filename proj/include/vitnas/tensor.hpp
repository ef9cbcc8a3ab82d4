#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// Tensors are reference-counted handles: copying a Tensor aliases the same
// storage, which is what lets the tape's backward rules write gradients into
// the inputs they were recorded with. Every operation takes the Tape
// explicitly; when the tape is not recording (evaluation) or no input needs a
// gradient, nothing is recorded and the op is a plain forward computation.
//
// Instantiated for float (training) and double (gradient checks).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vitnas {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Which GELU formula the forward pass uses. Serialized into checkpoints.
enum class GeluForm { tanh, erf };

std::string_view to_string(GeluForm form);
GeluForm parse_gelu_form(std::string_view name);

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, bool requires_grad = false);
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }
    /// Product of all but the last extent (1 for a 1-D tensor).
    std::size_t rows() const;
    /// Last extent.
    std::size_t cols() const;

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    T item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient buffer, allocated as zeros on first access. Handle semantics:
    /// a const handle still refers to mutable storage.
    std::span<T> grad() const;
    void zero_grad() const;

    /// Deep copy of the values into a fresh leaf tensor.
    Tensor clone(bool requires_grad = false) const;

    /// True when both handles refer to the same storage.
    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

private:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;
        bool requires_grad = false;
    };
    std::shared_ptr<Node> node_;
};

/// Ordered record of backward rules for one forward pass.
template <class T>
class Tape {
public:
    /// Receives each attention probability block (rows x cols, row-major) during forward.
    using AttentionHook = std::function<void(std::span<const T> probs, std::size_t rows, std::size_t cols)>;

    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    /// True when an op over these inputs must record a backward rule.
    bool wants(std::initializer_list<const Tensor<T>*> inputs) const;

    void push(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
    std::size_t size() const { return rules_.size(); }

    /// Seeds d(loss)/d(loss) = 1 and replays the rules in reverse recorded order.
    /// Gradients accumulate into every requires_grad tensor reachable from the loss.
    void backward(Tensor<T>& loss);

    /// Multiply-accumulate tally of every matmul-like op run through this tape.
    std::uint64_t macs() const { return macs_; }
    void count_macs(std::uint64_t n) { macs_ += n; }

    void set_attention_hook(AttentionHook hook) { attention_hook_ = std::move(hook); }
    const AttentionHook& attention_hook() const { return attention_hook_; }

private:
    bool recording_;
    std::vector<std::function<void()>> rules_;
    std::uint64_t macs_ = 0;
    AttentionHook attention_hook_;
};

// ---- operations -----------------------------------------------------------

/// a[m x k] . b[k x n]
template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// x[r x in] . w[out x in]^T + bias[out]
template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Elementwise sum of two same-shape tensors.
template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// Row-wise softmax with per-row max subtraction. NaN inputs propagate.
template <class T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x);

/// Normalizes over the last axis, then applies gamma and beta.
template <class T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps);

template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x, GeluForm form = GeluForm::tanh);

/// Mean label-smoothed negative log-likelihood. Target mass is
/// (1 - smoothing) on the label plus smoothing / C spread over all classes.
template <class T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        double smoothing);

/// Leading block [0, rows) x [0, cols) of a 2-D tensor. Returns the source
/// itself when the block is the full extent; otherwise copies, and the
/// backward rule adds into the matching block of the source gradient.
template <class T>
Tensor<T> slice_leading(Tape<T>& tape, const Tensor<T>& src, std::size_t rows, std::size_t cols);

/// Leading [0, n) of a 1-D tensor.
template <class T>
Tensor<T> slice_leading(Tape<T>& tape, const Tensor<T>& src, std::size_t n);

/// Builds the token sequence for a batch: for each image, the class token
/// followed by its patch embeddings, plus position embeddings.
/// patches: [batch*P x E], cls: [E], pos: [(P+1) x E] -> [batch*(P+1) x E]
template <class T>
Tensor<T> embed_tokens(Tape<T>& tape, const Tensor<T>& patches, const Tensor<T>& cls, const Tensor<T>& pos,
                       std::size_t batch);

/// Scaled dot-product attention over contiguous per-head column groups.
/// q, k, v: [batch*N x D], heads divides D, scale 1/sqrt(D/heads).
template <class T>
Tensor<T> multi_head_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t batch, std::size_t heads);

/// Rows 0, stride, 2*stride, ... of a 2-D tensor.
template <class T>
Tensor<T> select_rows(Tape<T>& tape, const Tensor<T>& x, std::size_t stride);

/// Scalar sum(x * weights); weights are constants.
template <class T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& x, std::span<const T> weights);

/// Scalar GELU used by the forward op, exposed for oracles and tests.
double gelu_value(double x, GeluForm form);

}  // namespace vitnas
