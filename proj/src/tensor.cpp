#include "vitnas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "vitnas/error.hpp"

namespace vitnas {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <class T>
MatMap<T> as_mat(std::span<T> s, std::size_t r, std::size_t c) {
    return MatMap<T>(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <class T>
ConstMatMap<T> as_mat(std::span<const T> s, std::size_t r, std::size_t c) {
    return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

[[noreturn]] void dim_error(std::string_view op, const Shape& a, const Shape& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                         shape_string(b));
}

void require_2d(std::string_view op, const Shape& s) {
    if (s.size() != 2) {
        throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(s));
    }
}

constexpr double kSqrt2OverPi = 0.79788456080286535587989211986876;
constexpr double kGeluCubic = 0.044715;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? " x " : "") << shape[i];
    }
    os << ')';
    return os.str();
}

std::string_view to_string(GeluForm form) { return form == GeluForm::tanh ? "tanh" : "erf"; }

GeluForm parse_gelu_form(std::string_view name) {
    if (name == "tanh") {
        return GeluForm::tanh;
    }
    if (name == "erf") {
        return GeluForm::erf;
    }
    throw ConfigError("unknown GELU form '" + std::string(name) + "' (expected tanh or erf)");
}

double gelu_value(double x, GeluForm form) {
    if (form == GeluForm::erf) {
        return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    }
    return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

// ---- Tensor ---------------------------------------------------------------

template <class T>
Tensor<T>::Tensor(Shape shape, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->data.assign(shape_numel(shape), T(0));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : node_(std::make_shared<Node>()) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("tensor: shape " + shape_string(shape) + " does not match " +
                             std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
}

template <class T>
std::size_t Tensor<T>::rows() const {
    const auto& s = node_->shape;
    if (s.empty()) {
        return 1;
    }
    return shape_numel(s) / s.back();
}

template <class T>
std::size_t Tensor<T>::cols() const {
    const auto& s = node_->shape;
    return s.empty() ? 1 : s.back();
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw DimensionError("item(): tensor of shape " + shape_string(shape()) + " is not a scalar");
    }
    return node_->data[0];
}

template <class T>
std::span<T> Tensor<T>::grad() const {
    if (node_->grad.size() != node_->data.size()) {
        node_->grad.assign(node_->data.size(), T(0));
    }
    return node_->grad;
}

template <class T>
void Tensor<T>::zero_grad() const {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
    return Tensor(node_->shape, node_->data, requires_grad);
}

// ---- Tape -----------------------------------------------------------------

template <class T>
bool Tape<T>::wants(std::initializer_list<const Tensor<T>*> inputs) const {
    if (!recording_) {
        return false;
    }
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <class T>
void Tape<T>::backward(Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw DimensionError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
    }
    loss.grad()[0] += T(1);
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) {
        (*it)();
    }
    rules_.clear();
}

// ---- matmul ---------------------------------------------------------------

template <class T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    require_2d("matmul", a.shape());
    require_2d("matmul", b.shape());
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        dim_error("matmul", a.shape(), b.shape());
    }
    Tensor<T> out({m, n});
    as_mat(out.data(), m, n).noalias() = as_mat(a.data(), m, k) * as_mat(b.data(), k, n);
    tape.count_macs(static_cast<std::uint64_t>(m) * k * n);
    if (tape.wants({&a, &b})) {
        out.set_requires_grad(true);
        tape.push([a, b, out, m, k, n]() mutable {
            auto dc = as_mat(std::span<const T>(out.grad()), m, n);
            if (a.requires_grad()) {
                as_mat(a.grad(), m, k).noalias() += dc * as_mat(std::span<const T>(b.data()), k, n).transpose();
            }
            if (b.requires_grad()) {
                as_mat(b.grad(), k, n).noalias() += as_mat(std::span<const T>(a.data()), m, k).transpose() * dc;
            }
        });
    }
    return out;
}

// ---- linear ---------------------------------------------------------------

template <class T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    require_2d("linear", w.shape());
    const std::size_t r = x.rows(), in = x.cols(), out_dim = w.shape()[0];
    if (w.shape()[1] != in) {
        dim_error("linear", x.shape(), w.shape());
    }
    if (bias.numel() != out_dim) {
        dim_error("linear bias", w.shape(), bias.shape());
    }
    Tensor<T> out({r, out_dim});
    auto y = as_mat(out.data(), r, out_dim);
    y.noalias() = as_mat(x.data(), r, in) * as_mat(w.data(), out_dim, in).transpose();
    y.rowwise() += as_mat(bias.data(), 1, out_dim).row(0);
    tape.count_macs(static_cast<std::uint64_t>(r) * in * out_dim);
    if (tape.wants({&x, &w, &bias})) {
        out.set_requires_grad(true);
        tape.push([x, w, bias, out, r, in, out_dim]() mutable {
            auto dy = as_mat(std::span<const T>(out.grad()), r, out_dim);
            if (x.requires_grad()) {
                as_mat(x.grad(), r, in).noalias() += dy * as_mat(std::span<const T>(w.data()), out_dim, in);
            }
            if (w.requires_grad()) {
                as_mat(w.grad(), out_dim, in).noalias() +=
                    dy.transpose() * as_mat(std::span<const T>(x.data()), r, in);
            }
            if (bias.requires_grad()) {
                as_mat(bias.grad(), 1, out_dim) += dy.colwise().sum();
            }
        });
    }
    return out;
}

// ---- add ------------------------------------------------------------------

template <class T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        dim_error("add", a.shape(), b.shape());
    }
    Tensor<T> out(a.shape());
    auto o = out.data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = av[i] + bv[i];
    }
    if (tape.wants({&a, &b})) {
        out.set_requires_grad(true);
        tape.push([a, b, out]() mutable {
            auto g = std::span<const T>(out.grad());
            for (const Tensor<T>* t : {&a, &b}) {
                if (t->requires_grad()) {
                    auto dst = t->grad();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        dst[i] += g[i];
                    }
                }
            }
        });
    }
    return out;
}

// ---- softmax --------------------------------------------------------------

namespace {

template <class T>
void softmax_row(const T* in, T* out, std::size_t n) {
    T mx = in[0];
    for (std::size_t j = 1; j < n; ++j) {
        mx = std::max(mx, in[j]);
    }
    if (std::isnan(mx)) {
        // std::max skips NaN depending on position; force propagation.
        std::fill(out, out + n, std::numeric_limits<T>::quiet_NaN());
        return;
    }
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = std::exp(in[j] - mx);
        sum += out[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) {
        out[j] *= inv;
    }
}

// dx = y * (dy - sum(dy * y)) per row, accumulated into dx.
template <class T>
void softmax_row_backward(const T* y, const T* dy, T* dx, std::size_t n, T scale = T(1)) {
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) {
        dot += dy[j] * y[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
        dx[j] += scale * y[j] * (dy[j] - dot);
    }
}

}  // namespace

template <class T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& x) {
    const std::size_t r = x.rows(), c = x.cols();
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < r; ++i) {
        softmax_row(x.data().data() + i * c, out.data().data() + i * c, c);
    }
    if (tape.wants({&x})) {
        out.set_requires_grad(true);
        tape.push([x, out, r, c]() mutable {
            auto dx = x.grad();
            auto y = out.data();
            auto dy = out.grad();
            for (std::size_t i = 0; i < r; ++i) {
                softmax_row_backward(y.data() + i * c, dy.data() + i * c, dx.data() + i * c, c);
            }
        });
    }
    return out;
}

// ---- layernorm ------------------------------------------------------------

template <class T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    double eps) {
    const std::size_t r = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d) {
        dim_error("layernorm", x.shape(), gamma.shape());
    }
    if (!(eps > 0)) {
        throw std::invalid_argument("layernorm: eps must be positive");
    }
    Tensor<T> out(x.shape());
    std::vector<T> xhat(r * d);
    std::vector<T> rstd(r);
    auto xv = x.data();
    auto g = gamma.data();
    auto b = beta.data();
    auto o = out.data();
    for (std::size_t i = 0; i < r; ++i) {
        const T* row = xv.data() + i * d;
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) {
            mean += row[j];
        }
        mean /= T(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= T(d);
        const T rs = T(1) / std::sqrt(var + T(eps));
        rstd[i] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * rs;
            xhat[i * d + j] = h;
            o[i * d + j] = h * g[j] + b[j];
        }
    }
    if (tape.wants({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        tape.push([x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), r, d]() mutable {
            auto dy = std::span<const T>(out.grad());
            auto g = gamma.data();
            if (gamma.requires_grad() || beta.requires_grad()) {
                auto dg = gamma.requires_grad() ? gamma.grad() : std::span<T>();
                auto db = beta.requires_grad() ? beta.grad() : std::span<T>();
                for (std::size_t i = 0; i < r; ++i) {
                    for (std::size_t j = 0; j < d; ++j) {
                        if (!dg.empty()) {
                            dg[j] += dy[i * d + j] * xhat[i * d + j];
                        }
                        if (!db.empty()) {
                            db[j] += dy[i * d + j];
                        }
                    }
                }
            }
            if (x.requires_grad()) {
                auto dx = x.grad();
                for (std::size_t i = 0; i < r; ++i) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = dy[i * d + j] * g[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[i * d + j];
                    }
                    mean_dh /= T(d);
                    mean_dh_h /= T(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T dh = dy[i * d + j] * g[j];
                        dx[i * d + j] += rstd[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

// ---- gelu -----------------------------------------------------------------

template <class T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x, GeluForm form) {
    Tensor<T> out(x.shape());
    auto xv = x.data();
    auto o = out.data();
    const T c = T(kSqrt2OverPi);
    const T k = T(kGeluCubic);
    const T inv_sqrt2 = T(0.70710678118654752440084436210485);
    if (form == GeluForm::tanh) {
        for (std::size_t i = 0; i < o.size(); ++i) {
            const T v = xv[i];
            o[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
        }
    } else {
        for (std::size_t i = 0; i < o.size(); ++i) {
            const T v = xv[i];
            o[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
        }
    }
    if (tape.wants({&x})) {
        out.set_requires_grad(true);
        tape.push([x, out, form, c, k, inv_sqrt2]() mutable {
            auto xv = x.data();
            auto dy = out.grad();
            auto dx = x.grad();
            if (form == GeluForm::tanh) {
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    const T v = xv[i];
                    const T t = std::tanh(c * (v + k * v * v * v));
                    const T dydx = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * k * v * v);
                    dx[i] += dy[i] * dydx;
                }
            } else {
                const T inv_sqrt_2pi = T(0.39894228040143267793994605993438);
                for (std::size_t i = 0; i < dx.size(); ++i) {
                    const T v = xv[i];
                    const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                    const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                    dx[i] += dy[i] * (cdf + v * pdf);
                }
            }
        });
    }
    return out;
}

// ---- cross entropy --------------------------------------------------------

template <class T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        double smoothing) {
    require_2d("cross_entropy", logits.shape());
    const std::size_t b = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != b) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(b) + " rows");
    }
    if (!(smoothing >= 0.0 && smoothing < 1.0)) {
        throw std::invalid_argument("cross_entropy: smoothing must lie in [0, 1)");
    }
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
            throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(c) + ")");
        }
    }
    std::vector<T> probs(b * c);
    auto z = logits.data();
    double total = 0;
    const double off = smoothing / double(c);
    for (std::size_t i = 0; i < b; ++i) {
        softmax_row(z.data() + i * c, probs.data() + i * c, c);
        T mx = z[i * c];
        for (std::size_t j = 1; j < c; ++j) {
            mx = std::max(mx, z[i * c + j]);
        }
        double sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            sum += std::exp(double(z[i * c + j] - mx));
        }
        const double lse = double(mx) + std::log(sum);
        double row_loss = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double q = off + (static_cast<std::size_t>(labels[i]) == j ? 1.0 - smoothing : 0.0);
            row_loss += q * (lse - double(z[i * c + j]));
        }
        total += row_loss;
    }
    Tensor<T> out({1}, std::vector<T>{T(total / double(b))});
    if (tape.wants({&logits})) {
        out.set_requires_grad(true);
        std::vector<std::int32_t> lab(labels.begin(), labels.end());
        tape.push([logits, out, probs = std::move(probs), lab = std::move(lab), b, c, smoothing, off]() mutable {
            const T up = out.grad()[0] / T(b);
            auto dz = logits.grad();
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    const double q = off + (static_cast<std::size_t>(lab[i]) == j ? 1.0 - smoothing : 0.0);
                    dz[i * c + j] += up * (probs[i * c + j] - T(q));
                }
            }
        });
    }
    return out;
}

// ---- slicing --------------------------------------------------------------

template <class T>
Tensor<T> slice_leading(Tape<T>& tape, const Tensor<T>& src, std::size_t rows, std::size_t cols) {
    require_2d("slice_leading", src.shape());
    const std::size_t sr = src.shape()[0], sc = src.shape()[1];
    if (rows > sr || cols > sc || rows == 0 || cols == 0) {
        dim_error("slice_leading", src.shape(), Shape{rows, cols});
    }
    if (rows == sr && cols == sc) {
        return src;
    }
    Tensor<T> out({rows, cols});
    as_mat(out.data(), rows, cols) = as_mat(src.data(), sr, sc).topLeftCorner(rows, cols);
    if (tape.wants({&src})) {
        out.set_requires_grad(true);
        tape.push([src, out, rows, cols, sr, sc]() mutable {
            as_mat(src.grad(), sr, sc).topLeftCorner(rows, cols) += as_mat(std::span<const T>(out.grad()), rows, cols);
        });
    }
    return out;
}

template <class T>
Tensor<T> slice_leading(Tape<T>& tape, const Tensor<T>& src, std::size_t n) {
    if (src.shape().size() != 1) {
        throw DimensionError("slice_leading: expected a 1-D tensor, got " + shape_string(src.shape()));
    }
    const std::size_t sn = src.numel();
    if (n > sn || n == 0) {
        dim_error("slice_leading", src.shape(), Shape{n});
    }
    if (n == sn) {
        return src;
    }
    auto sv = src.data();
    Tensor<T> out({n}, std::vector<T>(sv.begin(), sv.begin() + static_cast<std::ptrdiff_t>(n)));
    if (tape.wants({&src})) {
        out.set_requires_grad(true);
        tape.push([src, out, n]() mutable {
            auto g = src.grad();
            auto og = out.grad();
            for (std::size_t i = 0; i < n; ++i) {
                g[i] += og[i];
            }
        });
    }
    return out;
}

// ---- token assembly -------------------------------------------------------

template <class T>
Tensor<T> embed_tokens(Tape<T>& tape, const Tensor<T>& patches, const Tensor<T>& cls, const Tensor<T>& pos,
                       std::size_t batch) {
    const std::size_t e = patches.cols();
    if (batch == 0 || patches.rows() % batch != 0) {
        throw DimensionError("embed_tokens: " + std::to_string(patches.rows()) +
                             " patch rows not divisible by batch " + std::to_string(batch));
    }
    const std::size_t p = patches.rows() / batch;
    const std::size_t n = p + 1;
    if (cls.numel() != e) {
        dim_error("embed_tokens cls", patches.shape(), cls.shape());
    }
    if (pos.rows() != n || pos.cols() != e) {
        dim_error("embed_tokens pos", patches.shape(), pos.shape());
    }
    Tensor<T> out({batch * n, e});
    auto o = out.data();
    auto pv = patches.data();
    auto cv = cls.data();
    auto posv = pos.data();
    for (std::size_t b = 0; b < batch; ++b) {
        T* row = o.data() + (b * n) * e;
        for (std::size_t j = 0; j < e; ++j) {
            row[j] = cv[j] + posv[j];
        }
        for (std::size_t t = 1; t < n; ++t) {
            row = o.data() + (b * n + t) * e;
            const T* src = pv.data() + (b * p + t - 1) * e;
            const T* pe = posv.data() + t * e;
            for (std::size_t j = 0; j < e; ++j) {
                row[j] = src[j] + pe[j];
            }
        }
    }
    if (tape.wants({&patches, &cls, &pos})) {
        out.set_requires_grad(true);
        tape.push([patches, cls, pos, out, batch, p, n, e]() mutable {
            auto g = std::span<const T>(out.grad());
            if (patches.requires_grad()) {
                auto dp = patches.grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t t = 1; t < n; ++t) {
                        for (std::size_t j = 0; j < e; ++j) {
                            dp[(b * p + t - 1) * e + j] += g[(b * n + t) * e + j];
                        }
                    }
                }
            }
            if (cls.requires_grad()) {
                auto dc = cls.grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t j = 0; j < e; ++j) {
                        dc[j] += g[(b * n) * e + j];
                    }
                }
            }
            if (pos.requires_grad()) {
                auto dpos = pos.grad();
                for (std::size_t b = 0; b < batch; ++b) {
                    for (std::size_t t = 0; t < n; ++t) {
                        for (std::size_t j = 0; j < e; ++j) {
                            dpos[t * e + j] += g[(b * n + t) * e + j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---- attention ------------------------------------------------------------

template <class T>
Tensor<T> multi_head_attention(Tape<T>& tape, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               std::size_t batch, std::size_t heads) {
    require_2d("attention", q.shape());
    if (k.shape() != q.shape() || v.shape() != q.shape()) {
        dim_error("attention", q.shape(), k.shape() != q.shape() ? k.shape() : v.shape());
    }
    const std::size_t rows = q.shape()[0], d = q.shape()[1];
    if (batch == 0 || rows % batch != 0 || heads == 0 || d % heads != 0) {
        throw DimensionError("attention: " + shape_string(q.shape()) + " cannot split into batch " +
                             std::to_string(batch) + " and " + std::to_string(heads) + " heads");
    }
    const std::size_t n = rows / batch, dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    const auto ld = static_cast<Eigen::Index>(d);
    const auto en = static_cast<Eigen::Index>(n);
    const auto edh = static_cast<Eigen::Index>(dh);

    Tensor<T> out({rows, d});
    std::vector<T> probs(batch * heads * n * n);
    RowMat<T> scores(en, en);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * n * d + h * dh;
            ConstStridedMap<T> qh(q.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
            ConstStridedMap<T> kh(k.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
            ConstStridedMap<T> vh(v.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
            StridedMap<T> oh(out.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
            scores.noalias() = qh * kh.transpose();
            scores *= scale;
            T* pb = probs.data() + (b * heads + h) * n * n;
            for (std::size_t i = 0; i < n; ++i) {
                softmax_row(scores.data() + i * n, pb + i * n, n);
            }
            MatMap<T> pm(pb, en, en);
            oh.noalias() = pm * vh;
            if (tape.attention_hook()) {
                tape.attention_hook()(std::span<const T>(pb, n * n), n, n);
            }
        }
    }
    tape.count_macs(2ULL * batch * n * n * d);

    if (tape.wants({&q, &k, &v})) {
        out.set_requires_grad(true);
        tape.push([q, k, v, out, probs = std::move(probs), batch, heads, n, d, dh, scale, ld, en, edh]() mutable {
            auto go = std::span<const T>(out.grad());
            // Inputs without requires_grad get a scratch buffer so the kernel stays branch-free.
            std::vector<T> scratch_q, scratch_k, scratch_v;
            auto grad_or_scratch = [](const Tensor<T>& t, std::vector<T>& scratch) -> T* {
                if (t.requires_grad()) {
                    return t.grad().data();
                }
                scratch.assign(t.numel(), T(0));
                return scratch.data();
            };
            T* dq_ptr = grad_or_scratch(q, scratch_q);
            T* dk_ptr = grad_or_scratch(k, scratch_k);
            T* dv_ptr = grad_or_scratch(v, scratch_v);
            RowMat<T> dp(en, en);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = b * n * d + h * dh;
                    ConstStridedMap<T> qh(q.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
                    ConstStridedMap<T> kh(k.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
                    ConstStridedMap<T> vh(v.data().data() + off, en, edh, Eigen::OuterStride<>(ld));
                    ConstStridedMap<T> doh(go.data() + off, en, edh, Eigen::OuterStride<>(ld));
                    StridedMap<T> dqh(dq_ptr + off, en, edh, Eigen::OuterStride<>(ld));
                    StridedMap<T> dkh(dk_ptr + off, en, edh, Eigen::OuterStride<>(ld));
                    StridedMap<T> dvh(dv_ptr + off, en, edh, Eigen::OuterStride<>(ld));
                    const T* pb = probs.data() + (b * heads + h) * n * n;
                    ConstMatMap<T> pm(pb, en, en);
                    dvh.noalias() += pm.transpose() * doh;
                    RowMat<T> dprob = doh * vh.transpose();
                    dp.setZero();
                    for (std::size_t i = 0; i < n; ++i) {
                        softmax_row_backward(pb + i * n, dprob.data() + i * n, dp.data() + i * n, n, scale);
                    }
                    dqh.noalias() += dp * kh;
                    dkh.noalias() += dp.transpose() * qh;
                }
            }
        });
    }
    return out;
}

// ---- row selection --------------------------------------------------------

template <class T>
Tensor<T> select_rows(Tape<T>& tape, const Tensor<T>& x, std::size_t stride) {
    const std::size_t r = x.rows(), c = x.cols();
    if (stride == 0 || r % stride != 0) {
        throw DimensionError("select_rows: " + std::to_string(r) + " rows not divisible by stride " +
                             std::to_string(stride));
    }
    const std::size_t m = r / stride;
    Tensor<T> out({m, c});
    auto o = out.data();
    auto xv = x.data();
    for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(xv.data() + i * stride * c, c, o.data() + i * c);
    }
    if (tape.wants({&x})) {
        out.set_requires_grad(true);
        tape.push([x, out, m, c, stride]() mutable {
            auto dx = x.grad();
            auto g = out.grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    dx[i * stride * c + j] += g[i * c + j];
                }
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> weighted_sum(Tape<T>& tape, const Tensor<T>& x, std::span<const T> weights) {
    if (weights.size() != x.numel()) {
        dim_error("weighted_sum", x.shape(), Shape{weights.size()});
    }
    T s = 0;
    auto xv = x.data();
    for (std::size_t i = 0; i < weights.size(); ++i) {
        s += xv[i] * weights[i];
    }
    Tensor<T> out({1}, std::vector<T>{s});
    if (tape.wants({&x})) {
        out.set_requires_grad(true);
        std::vector<T> w(weights.begin(), weights.end());
        tape.push([x, out, w = std::move(w)]() mutable {
            const T up = out.grad()[0];
            auto dx = x.grad();
            for (std::size_t i = 0; i < w.size(); ++i) {
                dx[i] += up * w[i];
            }
        });
    }
    return out;
}

// ---- instantiation --------------------------------------------------------

#define VITNAS_INSTANTIATE_TENSOR(T)                                                                          \
    template class Tensor<T>;                                                                                 \
    template class Tape<T>;                                                                                   \
    template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);               \
    template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> softmax_rows(Tape<T>&, const Tensor<T>&);                                             \
    template Tensor<T> layernorm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);    \
    template Tensor<T> gelu(Tape<T>&, const Tensor<T>&, GeluForm);                                           \
    template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const std::int32_t>, double);     \
    template Tensor<T> slice_leading(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t);                  \
    template Tensor<T> slice_leading(Tape<T>&, const Tensor<T>&, std::size_t);                               \
    template Tensor<T> embed_tokens(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                    std::size_t);                                                             \
    template Tensor<T> multi_head_attention(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                            std::size_t, std::size_t);                                        \
    template Tensor<T> select_rows(Tape<T>&, const Tensor<T>&, std::size_t);                                 \
    template Tensor<T> weighted_sum(Tape<T>&, const Tensor<T>&, std::span<const T>);

VITNAS_INSTANTIATE_TENSOR(float)
VITNAS_INSTANTIATE_TENSOR(double)

#undef VITNAS_INSTANTIATE_TENSOR

}  // namespace vitnas
