#include "pianotimbre/layers.hpp"

#include "blas.hpp"

#include <atomic>
#include <cstring>
#include <sstream>

namespace pt {

namespace {

std::atomic<bool> g_finite_checks{false};

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what)
{
    require(t.rank() == rank, ErrorCode::DimMismatch,
            std::string(what) + " expects rank " + std::to_string(rank) + ", got " + dims_to_string(t.dims()));
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding, std::size_t l_out)
{
    const std::size_t channels = x.dim(0);
    const std::size_t length = x.dim(1);
    Tensor<T> cols({channels * kernel, l_out});
    for (std::size_t c = 0; c < channels; ++c) {
        const T* src = x.row(c);
        for (std::size_t k = 0; k < kernel; ++k) {
            T* dst = cols.row(c * kernel + k);
            for (std::size_t o = 0; o < l_out; ++o) {
                const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(padding);
                dst[o] = (idx >= 0 && idx < static_cast<std::ptrdiff_t>(length)) ? src[idx] : T(0);
            }
        }
    }
    return cols;
}

template <typename T>
Tensor<T> col2im(const Tensor<T>& cols, std::size_t channels, std::size_t length, std::size_t kernel,
                 std::size_t stride, std::size_t padding)
{
    const std::size_t l_out = cols.dim(1);
    Tensor<T> dx({channels, length});
    for (std::size_t c = 0; c < channels; ++c) {
        T* dst = dx.row(c);
        for (std::size_t k = 0; k < kernel; ++k) {
            const T* src = cols.row(c * kernel + k);
            for (std::size_t o = 0; o < l_out; ++o) {
                const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(padding);
                if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(length))
                    dst[idx] += src[o];
            }
        }
    }
    return dx;
}

} // namespace

std::string dims_to_string(const Dims& dims)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i)
        os << (i ? ", " : "") << dims[i];
    os << ']';
    return os.str();
}

void set_finite_checks(bool enabled) noexcept { g_finite_checks = enabled; }
bool finite_checks_enabled() noexcept { return g_finite_checks; }

std::size_t group_count_for(std::size_t channels, std::size_t preferred)
{
    for (std::size_t g = std::min(channels, std::max<std::size_t>(preferred, 1)); g > 1; --g)
        if (channels % g == 0)
            return g;
    return 1;
}

template <typename T>
void init_uniform_fan_in(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values())
        v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------- linear

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    require_rank(weight, 2, "linear weight");
    const std::size_t in = weight.dim(1);
    const std::size_t out = weight.dim(0);
    require(x.rank() >= 1 && x.dims().back() == in, ErrorCode::DimMismatch,
            "linear input " + dims_to_string(x.dims()) + " vs weight " + dims_to_string(weight.dims()));
    require(bias.size() == out, ErrorCode::DimMismatch, "linear bias length");
    const std::size_t rows = x.size() / in;

    Dims out_dims = x.dims();
    out_dims.back() = out;
    Tensor<T> y(out_dims);
    for (std::size_t r = 0; r < rows; ++r)
        std::memcpy(y.data() + r * out, bias.data(), out * sizeof(T));
    detail::gemm(false, true, static_cast<int>(rows), static_cast<int>(out), static_cast<int>(in), T(1), x.data(),
                 static_cast<int>(in), weight.data(), static_cast<int>(in), T(1), y.data(), static_cast<int>(out));
    return y;
}

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in, std::size_t out)
    : weight(name + ".weight", {out, in}), bias(name + ".bias", {out})
{
}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng)
{
    init_uniform_fan_in(weight.value, weight.value.dim(1), rng);
    init_uniform_fan_in(bias.value, weight.value.dim(1), rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x)
{
    auto y = linear_forward(x, weight.value, bias.value);
    input_ = x;
    check_finite(y, "linear");
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy)
{
    require(input_.has_value(), ErrorCode::GraphNotRecorded, "linear backward before forward");
    const auto& x = *input_;
    const std::size_t in = weight.value.dim(1);
    const std::size_t out = weight.value.dim(0);
    const std::size_t rows = x.size() / in;
    require(dy.size() == rows * out, ErrorCode::DimMismatch, "linear backward gradient dims");

    // dW += dy^T x ; db += colsum(dy) ; dx = dy W
    detail::gemm(true, false, static_cast<int>(out), static_cast<int>(in), static_cast<int>(rows), T(1), dy.data(),
                 static_cast<int>(out), x.data(), static_cast<int>(in), T(1), weight.grad.data(), static_cast<int>(in));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o)
            bias.grad[o] += dy[r * out + o];
    Tensor<T> dx(x.dims());
    detail::gemm(false, false, static_cast<int>(rows), static_cast<int>(in), static_cast<int>(out), T(1), dy.data(),
                 static_cast<int>(out), weight.value.data(), static_cast<int>(in), T(0), dx.data(), static_cast<int>(in));
    input_.reset();
    return dx;
}

// ---------------------------------------------------------------- conv1d

template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                         std::size_t padding)
{
    require_rank(x, 2, "conv1d input");
    require_rank(kernel, 3, "conv1d kernel");
    require(stride >= 1, ErrorCode::InvalidArgument, "conv1d stride must be >= 1");
    const std::size_t c_out = kernel.dim(0);
    const std::size_t c_in = kernel.dim(1);
    const std::size_t k = kernel.dim(2);
    require(x.dim(0) == c_in, ErrorCode::DimMismatch,
            "conv1d input channels " + std::to_string(x.dim(0)) + " vs kernel " + dims_to_string(kernel.dims()));
    require(bias.empty() || bias.size() == c_out, ErrorCode::DimMismatch, "conv1d bias length");
    const std::size_t l_out = conv1d_output_length(x.dim(1), k, stride, padding);

    const bool direct = k == 1 && stride == 1 && padding == 0;
    const Tensor<T> cols = direct ? Tensor<T>() : im2col(x, k, stride, padding, l_out);
    const T* b_ptr = direct ? x.data() : cols.data();

    Tensor<T> y({c_out, l_out});
    if (!bias.empty())
        for (std::size_t o = 0; o < c_out; ++o)
            std::fill(y.row(o), y.row(o) + l_out, bias[o]);
    detail::gemm(false, false, static_cast<int>(c_out), static_cast<int>(l_out), static_cast<int>(c_in * k), T(1),
                 kernel.data(), static_cast<int>(c_in * k), b_ptr, static_cast<int>(l_out), T(1), y.data(),
                 static_cast<int>(l_out));
    return y;
}

template <typename T>
Conv1d<T>::Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                  std::size_t stride, std::size_t padding)
    : weight(name + ".weight", {out_channels, in_channels, kernel}), bias(name + ".bias", {out_channels}),
      in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), padding_(padding)
{
}

template <typename T>
void Conv1d<T>::init(std::mt19937_64& rng)
{
    init_uniform_fan_in(weight.value, in_ * kernel_, rng);
    init_uniform_fan_in(bias.value, in_ * kernel_, rng);
}

template <typename T>
Tensor<T> Conv1d<T>::forward(const Tensor<T>& x)
{
    require_rank(x, 2, "conv1d input");
    require(x.dim(0) == in_, ErrorCode::DimMismatch,
            weight.name + ": expected " + std::to_string(in_) + " input channels, got " + std::to_string(x.dim(0)));
    const std::size_t l_out = conv1d_output_length(x.dim(1), kernel_, stride_, padding_);
    input_length_ = x.dim(1);
    columns_ = (kernel_ == 1 && stride_ == 1 && padding_ == 0) ? x : im2col(x, kernel_, stride_, padding_, l_out);

    Tensor<T> y({out_, l_out});
    for (std::size_t o = 0; o < out_; ++o)
        std::fill(y.row(o), y.row(o) + l_out, bias.value[o]);
    detail::gemm(false, false, static_cast<int>(out_), static_cast<int>(l_out), static_cast<int>(in_ * kernel_), T(1),
                 weight.value.data(), static_cast<int>(in_ * kernel_), columns_->data(), static_cast<int>(l_out), T(1),
                 y.data(), static_cast<int>(l_out));
    check_finite(y, "conv1d");
    return y;
}

template <typename T>
Tensor<T> Conv1d<T>::backward(const Tensor<T>& dy)
{
    require(columns_.has_value(), ErrorCode::GraphNotRecorded, weight.name + " backward before forward");
    const auto& cols = *columns_;
    const std::size_t l_out = cols.dim(1);
    require(dy.rank() == 2 && dy.dim(0) == out_ && dy.dim(1) == l_out, ErrorCode::DimMismatch,
            weight.name + " backward gradient dims " + dims_to_string(dy.dims()));
    const int ck = static_cast<int>(in_ * kernel_);

    detail::gemm(false, true, static_cast<int>(out_), ck, static_cast<int>(l_out), T(1), dy.data(),
                 static_cast<int>(l_out), cols.data(), static_cast<int>(l_out), T(1), weight.grad.data(), ck);
    for (std::size_t o = 0; o < out_; ++o) {
        const T* r = dy.row(o);
        T acc = 0;
        for (std::size_t i = 0; i < l_out; ++i)
            acc += r[i];
        bias.grad[o] += acc;
    }

    Tensor<T> dcols({in_ * kernel_, l_out});
    detail::gemm(true, false, ck, static_cast<int>(l_out), static_cast<int>(out_), T(1), weight.value.data(), ck,
                 dy.data(), static_cast<int>(l_out), T(0), dcols.data(), static_cast<int>(l_out));
    columns_.reset();
    if (kernel_ == 1 && stride_ == 1 && padding_ == 0)
        return dcols;
    return col2im(dcols, in_, input_length_, kernel_, stride_, padding_);
}

// ---------------------------------------------------------------- group norm

template <typename T>
GroupNorm<T>::GroupNorm(std::string name, std::size_t channels, std::size_t groups, double eps)
    : gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}), channels_(channels), groups_(groups),
      eps_(eps)
{
    require(groups >= 1 && channels % groups == 0, ErrorCode::DimMismatch,
            name + ": " + std::to_string(channels) + " channels not divisible into " + std::to_string(groups) +
                " groups");
    gamma.value.fill(T(1));
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(const Tensor<T>& x)
{
    require_rank(x, 2, "group norm input");
    require(x.dim(0) == channels_, ErrorCode::DimMismatch, gamma.name + ": channel mismatch");
    const std::size_t length = x.dim(1);
    const std::size_t per_group = channels_ / groups_;
    const double n = static_cast<double>(per_group * length);

    Tensor<T> xhat(x.dims());
    Tensor<T> y(x.dims());
    inv_std_.assign(groups_, T(0));
    for (std::size_t g = 0; g < groups_; ++g) {
        const std::size_t begin = g * per_group * length;
        const std::size_t end = begin + per_group * length;
        double mean = 0.0;
        for (std::size_t i = begin; i < end; ++i)
            mean += x[i];
        mean /= n;
        double var = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const double d = x[i] - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[g] = static_cast<T>(inv);
        for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T gm = gamma.value[c];
            const T bt = beta.value[c];
            const T* xr = x.row(c);
            T* hr = xhat.row(c);
            T* yr = y.row(c);
            for (std::size_t l = 0; l < length; ++l) {
                hr[l] = static_cast<T>((xr[l] - mean) * inv);
                yr[l] = gm * hr[l] + bt;
            }
        }
    }
    xhat_ = std::move(xhat);
    check_finite(y, "group norm");
    return y;
}

template <typename T>
const Tensor<T>& GroupNorm<T>::normalized() const
{
    require(xhat_.has_value(), ErrorCode::GraphNotRecorded, "group norm has no recorded forward");
    return *xhat_;
}

template <typename T>
Tensor<T> GroupNorm<T>::backward(const Tensor<T>& dy)
{
    require(xhat_.has_value(), ErrorCode::GraphNotRecorded, gamma.name + " backward before forward");
    const auto& xhat = *xhat_;
    require(dy.dims() == xhat.dims(), ErrorCode::DimMismatch, gamma.name + " backward gradient dims");
    const std::size_t length = xhat.dim(1);
    const std::size_t per_group = channels_ / groups_;
    const double n = static_cast<double>(per_group * length);

    Tensor<T> dx(xhat.dims());
    for (std::size_t g = 0; g < groups_; ++g) {
        double sum_dxhat = 0.0;
        double sum_dxhat_xhat = 0.0;
        for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c) {
            const T gm = gamma.value[c];
            const T* dr = dy.row(c);
            const T* hr = xhat.row(c);
            double dg = 0.0, db = 0.0;
            for (std::size_t l = 0; l < length; ++l) {
                dg += static_cast<double>(dr[l]) * hr[l];
                db += dr[l];
                const double dh = static_cast<double>(dr[l]) * gm;
                sum_dxhat += dh;
                sum_dxhat_xhat += dh * hr[l];
            }
            gamma.grad[c] += static_cast<T>(dg);
            beta.grad[c] += static_cast<T>(db);
        }
        const double inv = inv_std_[g];
        const double mean_dxhat = sum_dxhat / n;
        const double mean_dxhat_xhat = sum_dxhat_xhat / n;
        for (std::size_t c = g * per_group; c < (g + 1) * per_group; ++c) {
            const double gm = gamma.value[c];
            const T* dr = dy.row(c);
            const T* hr = xhat.row(c);
            T* out = dx.row(c);
            for (std::size_t l = 0; l < length; ++l)
                out[l] = static_cast<T>(inv * (dr[l] * gm - mean_dxhat - hr[l] * mean_dxhat_xhat));
        }
    }
    xhat_.reset();
    return dx;
}

// ---------------------------------------------------------------- SiLU

template <typename T>
Tensor<T> SiLU<T>::forward(const Tensor<T>& x)
{
    Tensor<T> y(x.dims());
    Tensor<T> sig(x.dims());
    const std::size_t n = x.size();
    const T* in = x.data();
    T* out = y.data();
    T* sp = sig.data();
    for (std::size_t i = 0; i < n; ++i) {
        sp[i] = T(1) / (T(1) + std::exp(-in[i]));
        out[i] = in[i] * sp[i];
    }
    sigmoid_ = std::move(sig);
    output_ = y;
    return y;
}

template <typename T>
Tensor<T> SiLU<T>::backward(const Tensor<T>& dy)
{
    require(sigmoid_.has_value(), ErrorCode::GraphNotRecorded, "SiLU backward before forward");
    const auto& s = *sigmoid_;
    const auto& y = *output_;
    require(dy.size() == s.size(), ErrorCode::DimMismatch, "SiLU backward gradient dims");
    Tensor<T> dx(s.dims());
    const std::size_t n = s.size();
    for (std::size_t i = 0; i < n; ++i)
        dx[i] = dy[i] * (s[i] + y[i] * (T(1) - s[i]));
    sigmoid_.reset();
    output_.reset();
    return dx;
}

// ---------------------------------------------------------------- attention

template <typename T>
SelfAttention<T>::SelfAttention(std::string name, std::size_t channels, std::size_t heads, std::size_t groups)
    : norm(name + ".norm", channels, groups), qkv(name + ".qkv", channels, 3 * channels, 1),
      proj(name + ".proj", channels, channels, 1), channels_(channels), heads_(heads)
{
    require(heads >= 1 && channels % heads == 0, ErrorCode::DimMismatch,
            name + ": channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
}

template <typename T>
void SelfAttention<T>::init(std::mt19937_64& rng)
{
    qkv.init(rng);
    proj.init(rng);
}

template <typename T>
void SelfAttention<T>::collect(ParamRefs<T>& out)
{
    norm.collect(out);
    qkv.collect(out);
    proj.collect(out);
}

template <typename T>
Tensor<T> SelfAttention<T>::forward(const Tensor<T>& x)
{
    require_rank(x, 2, "self attention input");
    require(x.dim(0) == channels_, ErrorCode::DimMismatch, "self attention channel mismatch");
    const std::size_t length = x.dim(1);
    const std::size_t hd = channels_ / heads_;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    const int L = static_cast<int>(length);
    const int D = static_cast<int>(hd);

    qkv_out_ = qkv.forward(norm.forward(x));
    attended_ = Tensor<T>({channels_, length});
    weights_.assign(heads_, Tensor<T>({length, length}));

    for (std::size_t h = 0; h < heads_; ++h) {
        const T* q = qkv_out_.row(h * hd);
        const T* k = qkv_out_.row(channels_ + h * hd);
        const T* v = qkv_out_.row(2 * channels_ + h * hd);
        Tensor<T>& a = weights_[h];
        detail::gemm(true, false, L, L, D, scale, q, L, k, L, T(0), a.data(), L);
        for (std::size_t i = 0; i < length; ++i) {
            T* r = a.row(i);
            const T mx = *std::max_element(r, r + length);
            T sum = 0;
            for (std::size_t j = 0; j < length; ++j) {
                r[j] = std::exp(r[j] - mx);
                sum += r[j];
            }
            const T inv = T(1) / sum;
            for (std::size_t j = 0; j < length; ++j)
                r[j] *= inv;
        }
        detail::gemm(false, true, D, L, L, T(1), v, L, a.data(), L, T(0), attended_.row(h * hd), L);
    }

    Tensor<T> y = proj.forward(attended_);
    y += x;
    recorded_ = true;
    check_finite(y, "self attention");
    return y;
}

template <typename T>
Tensor<T> SelfAttention<T>::backward(const Tensor<T>& dy)
{
    require(recorded_, ErrorCode::GraphNotRecorded, "self attention backward before forward");
    const std::size_t length = attended_.dim(1);
    const std::size_t hd = channels_ / heads_;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    const int L = static_cast<int>(length);
    const int D = static_cast<int>(hd);

    const Tensor<T> d_att = proj.backward(dy);
    Tensor<T> d_qkv({3 * channels_, length});
    Tensor<T> d_a({length, length});

    for (std::size_t h = 0; h < heads_; ++h) {
        const T* q = qkv_out_.row(h * hd);
        const T* k = qkv_out_.row(channels_ + h * hd);
        const T* v = qkv_out_.row(2 * channels_ + h * hd);
        const T* d_o = d_att.row(h * hd);
        const Tensor<T>& a = weights_[h];

        detail::gemm(false, false, D, L, L, T(1), d_o, L, a.data(), L, T(0), d_qkv.row(2 * channels_ + h * hd), L);
        detail::gemm(true, false, L, L, D, T(1), d_o, L, v, L, T(0), d_a.data(), L);
        // Softmax backward in place: dS = A * (dA - rowsum(dA * A)).
        for (std::size_t i = 0; i < length; ++i) {
            T* dr = d_a.row(i);
            const T* ar = a.row(i);
            T dot = 0;
            for (std::size_t j = 0; j < length; ++j)
                dot += dr[j] * ar[j];
            for (std::size_t j = 0; j < length; ++j)
                dr[j] = ar[j] * (dr[j] - dot);
        }
        detail::gemm(false, true, D, L, L, scale, k, L, d_a.data(), L, T(0), d_qkv.row(h * hd), L);
        detail::gemm(false, false, D, L, L, scale, q, L, d_a.data(), L, T(0), d_qkv.row(channels_ + h * hd), L);
    }

    Tensor<T> dx = norm.backward(qkv.backward(d_qkv));
    dx += dy;
    recorded_ = false;
    return dx;
}

// ---------------------------------------------------------------- Adam

template <typename T>
void adam_step(const ParamRefs<T>& params, const AdamConfig& cfg)
{
    for (auto* p : params) {
        ++p->step_count;
        const double t = static_cast<double>(p->step_count);
        const double bc1 = 1.0 - std::pow(cfg.beta1, t);
        const double bc2 = 1.0 - std::pow(cfg.beta2, t);
        const std::size_t n = p->value.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double g = p->grad[i];
            const double m = cfg.beta1 * p->adam_m[i] + (1.0 - cfg.beta1) * g;
            const double v = cfg.beta2 * p->adam_v[i] + (1.0 - cfg.beta2) * g * g;
            p->adam_m[i] = static_cast<T>(m);
            p->adam_v[i] = static_cast<T>(v);
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            p->value[i] = static_cast<T>(p->value[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
        }
    }
}

#define PT_INSTANTIATE_LAYERS(T)                                                                                    \
    template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> conv1d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,            \
                                      std::size_t);                                                                 \
    template void init_uniform_fan_in(Tensor<T>&, std::size_t, std::mt19937_64&);                                   \
    template class Linear<T>;                                                                                       \
    template class Conv1d<T>;                                                                                       \
    template class GroupNorm<T>;                                                                                    \
    template class SiLU<T>;                                                                                         \
    template class SelfAttention<T>;                                                                                \
    template void adam_step(const ParamRefs<T>&, const AdamConfig&);

PT_INSTANTIATE_LAYERS(float)
PT_INSTANTIATE_LAYERS(double)

} // namespace pt
