#include "pianotimbre/unet.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <set>

namespace pt {

// ---------------------------------------------------------------- config

std::size_t UNetConfig::level_length(std::size_t level) const
{
    std::size_t len = input_length;
    for (std::size_t i = 0; i < level; ++i)
        len /= downsample_factors.at(i);
    return len;
}

bool UNetConfig::has_attention(std::size_t level) const
{
    return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void UNetConfig::validate() const
{
    require(levels() >= 1, ErrorCode::InvalidArgument, "U-Net needs at least one level");
    require(base_channels >= 1, ErrorCode::InvalidArgument, "base_channels must be >= 1");
    for (auto m : channel_multipliers)
        require(m >= 1, ErrorCode::InvalidArgument, "channel multipliers must be >= 1");
    require(downsample_factors.size() + 1 == levels(), ErrorCode::InvalidArgument,
            "need one downsample factor per level transition (" + std::to_string(levels() - 1) + "), got " +
                std::to_string(downsample_factors.size()));
    std::size_t product = 1;
    for (auto f : downsample_factors) {
        require(f >= 2, ErrorCode::InvalidArgument, "downsample factors must be >= 2");
        product *= f;
    }
    require(input_length >= 1 && input_length % product == 0, ErrorCode::DimMismatch,
            "input_length " + std::to_string(input_length) + " not divisible by total downsampling " +
                std::to_string(product));
    require(condition_width >= 1 && condition_frames >= 1, ErrorCode::InvalidArgument,
            "condition width and frame count must be >= 1");
    for (std::size_t i = 0; i < levels(); ++i) {
        const std::size_t len = level_length(i);
        require(len % condition_frames == 0 || condition_frames % len == 0, ErrorCode::DimMismatch,
                "condition timeline of " + std::to_string(condition_frames) + " frames does not map onto level " +
                    std::to_string(i) + " length " + std::to_string(len));
    }
    for (auto lvl : attention_levels) {
        require(lvl < levels(), ErrorCode::InvalidArgument, "attention level " + std::to_string(lvl) + " out of range");
        require(attention_heads >= 1 && channels(lvl) % attention_heads == 0, ErrorCode::DimMismatch,
                "attention heads must divide level channels");
    }
    require(time_embedding_dim >= 2 && time_embedding_dim % 2 == 0, ErrorCode::InvalidArgument,
            "time_embedding_dim must be even and >= 2");
    require(norm_groups >= 1, ErrorCode::InvalidArgument, "norm_groups must be >= 1");
    require(kernel_size % 2 == 1, ErrorCode::InvalidArgument, "kernel_size must be odd");
}

void to_json(nlohmann::json& j, const UNetConfig& c)
{
    j = nlohmann::json{{"input_length", c.input_length},
                       {"base_channels", c.base_channels},
                       {"channel_multipliers", c.channel_multipliers},
                       {"downsample_factors", c.downsample_factors},
                       {"attention_levels", c.attention_levels},
                       {"attention_heads", c.attention_heads},
                       {"condition_width", c.condition_width},
                       {"condition_frames", c.condition_frames},
                       {"time_embedding_dim", c.time_embedding_dim},
                       {"norm_groups", c.norm_groups},
                       {"kernel_size", c.kernel_size},
                       {"zero_init_output", c.zero_init_output}};
}

void from_json(const nlohmann::json& j, UNetConfig& c)
{
    static const std::set<std::string> known{"input_length",     "base_channels",    "channel_multipliers",
                                             "downsample_factors", "attention_levels", "attention_heads",
                                             "condition_width",  "condition_frames", "time_embedding_dim",
                                             "norm_groups",      "kernel_size",      "zero_init_output"};
    require(j.is_object(), ErrorCode::InvalidArgument, "unet config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(known.count(it.key()) > 0, ErrorCode::UnknownConfigKey, "unet." + it.key());
    c.input_length = j.value("input_length", c.input_length);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.channel_multipliers = j.value("channel_multipliers", c.channel_multipliers);
    if (j.contains("downsample_factors")) {
        const auto& f = j["downsample_factors"];
        if (f.is_number_integer()) {
            const std::size_t levels = c.channel_multipliers.empty() ? 0 : c.channel_multipliers.size() - 1;
            c.downsample_factors.assign(levels, f.get<std::size_t>());
        } else {
            c.downsample_factors = f.get<std::vector<std::size_t>>();
        }
    } else if (c.downsample_factors.size() + 1 != c.channel_multipliers.size() && !c.channel_multipliers.empty()) {
        c.downsample_factors.assign(c.channel_multipliers.size() - 1, 4);
    }
    c.attention_levels = j.value("attention_levels", c.attention_levels);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.condition_width = j.value("condition_width", c.condition_width);
    c.condition_frames = j.value("condition_frames", c.condition_frames);
    c.time_embedding_dim = j.value("time_embedding_dim", c.time_embedding_dim);
    c.norm_groups = j.value("norm_groups", c.norm_groups);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.zero_init_output = j.value("zero_init_output", c.zero_init_output);
}

// ---------------------------------------------------------------- helpers

namespace {

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.dim(1) == b.dim(1), ErrorCode::DimMismatch, "concat along channels needs equal lengths");
    Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1)});
    std::memcpy(out.data(), a.data(), a.size() * sizeof(T));
    std::memcpy(out.data() + a.size(), b.data(), b.size() * sizeof(T));
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first)
{
    const std::size_t len = x.dim(1);
    Tensor<T> a({first, len});
    Tensor<T> b({x.dim(0) - first, len});
    std::memcpy(a.data(), x.data(), a.size() * sizeof(T));
    std::memcpy(b.data(), x.data() + a.size(), b.size() * sizeof(T));
    return {std::move(a), std::move(b)};
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x, std::size_t factor)
{
    const std::size_t len = x.dim(1);
    Tensor<T> out({x.dim(0), len * factor});
    for (std::size_t c = 0; c < x.dim(0); ++c) {
        const T* in = x.row(c);
        T* o = out.row(c);
        for (std::size_t p = 0; p < len; ++p)
            std::fill(o + p * factor, o + (p + 1) * factor, in[p]);
    }
    return out;
}

template <typename T>
Tensor<T> upsample_backward(const Tensor<T>& dy, std::size_t factor)
{
    const std::size_t len = dy.dim(1) / factor;
    Tensor<T> dx({dy.dim(0), len});
    for (std::size_t c = 0; c < dy.dim(0); ++c) {
        const T* g = dy.row(c);
        T* o = dx.row(c);
        for (std::size_t p = 0; p < len; ++p) {
            T acc = 0;
            for (std::size_t k = 0; k < factor; ++k)
                acc += g[p * factor + k];
            o[p] = acc;
        }
    }
    return dx;
}

template <typename T>
void add_channel_bias(Tensor<T>& h, const Tensor<T>& bias)
{
    for (std::size_t c = 0; c < h.dim(0); ++c) {
        T* r = h.row(c);
        const T b = bias[c];
        for (std::size_t l = 0; l < h.dim(1); ++l)
            r[l] += b;
    }
}

} // namespace

template <typename T>
Tensor<T> timestep_features(double t, std::size_t dim)
{
    const std::size_t half = dim / 2;
    Tensor<T> out({1, dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
        const double arg = 1000.0 * t * freq;
        out[i] = static_cast<T>(std::sin(arg));
        out[half + i] = static_cast<T>(std::cos(arg));
    }
    return out;
}

template <typename T>
Tensor<T> resample_nearest(const Tensor<T>& in, std::size_t length)
{
    const std::size_t frames = in.dim(1);
    if (frames == length)
        return in;
    Tensor<T> out({in.dim(0), length});
    for (std::size_t c = 0; c < in.dim(0); ++c) {
        const T* src = in.row(c);
        T* dst = out.row(c);
        for (std::size_t p = 0; p < length; ++p)
            dst[p] = src[p * frames / length];
    }
    return out;
}

template <typename T>
Tensor<T> resample_nearest_backward(const Tensor<T>& grad, std::size_t frames)
{
    const std::size_t length = grad.dim(1);
    if (frames == length)
        return grad;
    Tensor<T> out({grad.dim(0), frames});
    for (std::size_t c = 0; c < grad.dim(0); ++c) {
        const T* src = grad.row(c);
        T* dst = out.row(c);
        for (std::size_t p = 0; p < length; ++p)
            dst[p * frames / length] += src[p];
    }
    return out;
}

// ---------------------------------------------------------------- res block

template <typename T>
ResBlock<T>::ResBlock(const std::string& name, std::size_t in, std::size_t out, std::size_t temb_width,
                      std::size_t groups, std::size_t kernel)
    : norm1_(name + ".norm1", in, group_count_for(in, groups)),
      conv1_(name + ".conv1", in, out, kernel, 1, kernel / 2), temb_proj_(name + ".temb", temb_width, out),
      norm2_(name + ".norm2", out, group_count_for(out, groups)),
      conv2_(name + ".conv2", out, out, kernel, 1, kernel / 2)
{
    if (in != out)
        skip_.emplace(name + ".skip", in, out, 1);
}

template <typename T>
void ResBlock<T>::init(std::mt19937_64& rng)
{
    conv1_.init(rng);
    temb_proj_.init(rng);
    conv2_.init(rng);
    if (skip_)
        skip_->init(rng);
}

template <typename T>
void ResBlock<T>::collect(ParamRefs<T>& out)
{
    norm1_.collect(out);
    conv1_.collect(out);
    temb_proj_.collect(out);
    norm2_.collect(out);
    conv2_.collect(out);
    if (skip_)
        skip_->collect(out);
}

template <typename T>
Tensor<T> ResBlock<T>::forward(const Tensor<T>& x, const Tensor<T>& temb)
{
    Tensor<T> h = conv1_.forward(act1_.forward(norm1_.forward(x)));
    add_channel_bias(h, temb_proj_.forward(temb_act_.forward(temb)));
    h = conv2_.forward(act2_.forward(norm2_.forward(h)));
    if (skip_)
        h += skip_->forward(x);
    else
        h += x;
    return h;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> ResBlock<T>::backward(const Tensor<T>& dy)
{
    Tensor<T> dx = skip_ ? skip_->backward(dy) : dy;
    const Tensor<T> dh = norm2_.backward(act2_.backward(conv2_.backward(dy)));

    Tensor<T> dbias({1, dh.dim(0)});
    for (std::size_t c = 0; c < dh.dim(0); ++c) {
        const T* r = dh.row(c);
        T acc = 0;
        for (std::size_t l = 0; l < dh.dim(1); ++l)
            acc += r[l];
        dbias[c] = acc;
    }
    Tensor<T> dtemb = temb_act_.backward(temb_proj_.backward(dbias));
    dx += norm1_.backward(act1_.backward(conv1_.backward(dh)));
    return {std::move(dx), std::move(dtemb)};
}

// ---------------------------------------------------------------- U-Net

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg) : cfg_(cfg)
{
    cfg_.validate();
    const std::size_t tdim = cfg_.time_embedding_dim;
    const std::size_t twidth = 4 * tdim;
    const std::size_t groups = cfg_.norm_groups;
    const std::size_t n = cfg_.levels();

    in_conv_ = Conv1d<T>("in_conv", 1, cfg_.channels(0), 7, 1, 3);
    time_fc1_ = Linear<T>("time.fc1", tdim, twidth);
    time_fc2_ = Linear<T>("time.fc2", twidth, twidth);

    levels_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string p = "level" + std::to_string(i);
        const std::size_t c = cfg_.channels(i);
        Level& lv = levels_[i];
        lv.enc = ResBlock<T>(p + ".enc", c + cfg_.condition_width, c, twidth, groups, cfg_.kernel_size);
        if (cfg_.has_attention(i)) {
            lv.enc_attn.emplace(p + ".enc_attn", c, cfg_.attention_heads, group_count_for(c, groups));
            lv.dec_attn.emplace(p + ".dec_attn", c, cfg_.attention_heads, group_count_for(c, groups));
        }
        if (i + 1 < n) {
            const std::size_t f = cfg_.downsample_factors[i];
            lv.down.emplace(p + ".down", c, cfg_.channels(i + 1), f, f, 0);
        }
        lv.dec = ResBlock<T>(p + ".dec", 2 * c, c, twidth, groups, cfg_.kernel_size);
        if (i > 0)
            lv.up.emplace(p + ".up", c, cfg_.channels(i - 1), 3, 1, 1);
    }

    const std::size_t deep = cfg_.channels(n - 1);
    mid1_ = ResBlock<T>("mid.block1", deep, deep, twidth, groups, cfg_.kernel_size);
    if (cfg_.has_attention(n - 1))
        mid_attn_.emplace("mid.attn", deep, cfg_.attention_heads, group_count_for(deep, groups));
    mid2_ = ResBlock<T>("mid.block2", deep, deep, twidth, groups, cfg_.kernel_size);

    out_norm_ = GroupNorm<T>("out_norm", cfg_.channels(0), group_count_for(cfg_.channels(0), groups));
    out_conv_ = Conv1d<T>("out_conv", cfg_.channels(0), 1, 3, 1, 1);
}

template <typename T>
void UNet<T>::init(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    in_conv_.init(rng);
    time_fc1_.init(rng);
    time_fc2_.init(rng);
    for (auto& lv : levels_) {
        lv.enc.init(rng);
        if (lv.enc_attn)
            lv.enc_attn->init(rng);
        if (lv.down)
            lv.down->init(rng);
        lv.dec.init(rng);
        if (lv.dec_attn)
            lv.dec_attn->init(rng);
        if (lv.up)
            lv.up->init(rng);
    }
    mid1_.init(rng);
    if (mid_attn_)
        mid_attn_->init(rng);
    mid2_.init(rng);
    out_conv_.init(rng);
    if (cfg_.zero_init_output) {
        out_conv_.weight.value.zero();
        out_conv_.bias.value.zero();
    }
}

template <typename T>
ParamRefs<T> UNet<T>::parameters()
{
    ParamRefs<T> out;
    in_conv_.collect(out);
    time_fc1_.collect(out);
    time_fc2_.collect(out);
    for (auto& lv : levels_) {
        lv.enc.collect(out);
        if (lv.enc_attn)
            lv.enc_attn->collect(out);
        if (lv.down)
            lv.down->collect(out);
        lv.dec.collect(out);
        if (lv.dec_attn)
            lv.dec_attn->collect(out);
        if (lv.up)
            lv.up->collect(out);
    }
    mid1_.collect(out);
    if (mid_attn_)
        mid_attn_->collect(out);
    mid2_.collect(out);
    out_norm_.collect(out);
    out_conv_.collect(out);
    return out;
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, double t, const Tensor<T>& cond)
{
    require(x.rank() == 2 && x.dim(0) == 1 && x.dim(1) == cfg_.input_length, ErrorCode::DimMismatch,
            "U-Net input must be [1, " + std::to_string(cfg_.input_length) + "], got " + dims_to_string(x.dims()));
    require(cond.rank() == 2 && cond.dim(0) == cfg_.condition_width && cond.dim(1) == cfg_.condition_frames,
            ErrorCode::DimMismatch,
            "conditioning must be [" + std::to_string(cfg_.condition_width) + ", " +
                std::to_string(cfg_.condition_frames) + "], got " + dims_to_string(cond.dims()));
    require(t >= 0.0 && t <= 1.0, ErrorCode::TOutOfRange, "diffusion time outside [0, 1]");

    const Tensor<T> temb =
        time_fc2_.forward(time_act_.forward(time_fc1_.forward(timestep_features<T>(t, cfg_.time_embedding_dim))));

    const std::size_t n = levels_.size();
    std::vector<Tensor<T>> skips(n);
    Tensor<T> h = in_conv_.forward(x);
    for (std::size_t i = 0; i < n; ++i) {
        Level& lv = levels_[i];
        h = lv.enc.forward(concat_channels(h, resample_nearest(cond, cfg_.level_length(i))), temb);
        if (lv.enc_attn)
            h = lv.enc_attn->forward(h);
        skips[i] = h;
        if (lv.down)
            h = lv.down->forward(h);
    }

    h = mid1_.forward(h, temb);
    if (mid_attn_)
        h = mid_attn_->forward(h);
    h = mid2_.forward(h, temb);

    for (std::size_t i = n; i-- > 0;) {
        Level& lv = levels_[i];
        h = lv.dec.forward(concat_channels(h, skips[i]), temb);
        if (lv.dec_attn)
            h = lv.dec_attn->forward(h);
        if (lv.up)
            h = lv.up->forward(upsample(h, cfg_.downsample_factors[i - 1]));
    }

    Tensor<T> y = out_conv_.forward(out_act_.forward(out_norm_.forward(h)));
    recorded_ = true;
    return y;
}

template <typename T>
Tensor<T> UNet<T>::backward(const Tensor<T>& dy)
{
    require(recorded_, ErrorCode::GraphNotRecorded, "U-Net backward before forward");
    recorded_ = false;
    const std::size_t n = levels_.size();
    Tensor<T> dtemb({1, 4 * cfg_.time_embedding_dim});
    Tensor<T> dcond({cfg_.condition_width, cfg_.condition_frames});
    std::vector<Tensor<T>> dskips(n);

    Tensor<T> d = out_norm_.backward(out_act_.backward(out_conv_.backward(dy)));

    for (std::size_t i = 0; i < n; ++i) {
        Level& lv = levels_[i];
        if (lv.up)
            d = upsample_backward(lv.up->backward(d), cfg_.downsample_factors[i - 1]);
        if (lv.dec_attn)
            d = lv.dec_attn->backward(d);
        auto [dcat, dt] = lv.dec.backward(d);
        dtemb += dt;
        auto [dh, dskip] = split_channels(dcat, cfg_.channels(i));
        dskips[i] = std::move(dskip);
        d = std::move(dh);
    }

    {
        auto [d2, dt2] = mid2_.backward(d);
        dtemb += dt2;
        d = std::move(d2);
        if (mid_attn_)
            d = mid_attn_->backward(d);
        auto [d1, dt1] = mid1_.backward(d);
        dtemb += dt1;
        d = std::move(d1);
    }

    for (std::size_t i = n; i-- > 0;) {
        Level& lv = levels_[i];
        if (lv.down)
            d = lv.down->backward(d);
        d += dskips[i];
        if (lv.enc_attn)
            d = lv.enc_attn->backward(d);
        auto [dcat, dt] = lv.enc.backward(d);
        dtemb += dt;
        auto [dh, dc] = split_channels(dcat, cfg_.channels(i));
        dcond += resample_nearest_backward(dc, cfg_.condition_frames);
        d = std::move(dh);
    }
    in_conv_.backward(d);

    time_fc1_.backward(time_act_.backward(time_fc2_.backward(dtemb)));
    return dcond;
}

template class ResBlock<float>;
template class ResBlock<double>;
template class UNet<float>;
template class UNet<double>;
template Tensor<float> timestep_features(double, std::size_t);
template Tensor<double> timestep_features(double, std::size_t);
template Tensor<float> resample_nearest(const Tensor<float>&, std::size_t);
template Tensor<double> resample_nearest(const Tensor<double>&, std::size_t);
template Tensor<float> resample_nearest_backward(const Tensor<float>&, std::size_t);
template Tensor<double> resample_nearest_backward(const Tensor<double>&, std::size_t);

} // namespace pt
