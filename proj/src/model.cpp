#include "pianotimbre/model.hpp"

#include "pianotimbre/loudness_encoder.hpp"

#include <nlohmann/json.hpp>

#include <set>

namespace pt {

void ModelConfig::sync_derived()
{
    unet.condition_width = pitch_dim + loudness_dim;
    unet.condition_frames = pitch_frame_count(unet.input_length, hop_samples);
}

void ModelConfig::validate() const
{
    require(pitch_dim >= 1 && loudness_dim >= 1, ErrorCode::InvalidArgument, "embedding widths must be >= 1");
    require(codebook_size >= 1, ErrorCode::InvalidArgument, "codebook_size must be >= 1");
    require(sample_rate > 0 && hop_samples > 0 && f0_window > 0, ErrorCode::InvalidArgument,
            "sample_rate, hop_samples and f0_window must be positive");
    require(unet.condition_width == pitch_dim + loudness_dim, ErrorCode::DimMismatch,
            "unet.condition_width must equal pitch_dim + loudness_dim");
    require(unet.condition_frames == pitch_frame_count(unet.input_length, hop_samples), ErrorCode::DimMismatch,
            "unet.condition_frames must equal ceil(input_length / hop)");
    unet.validate();
}

F0EstimatorConfig ModelConfig::f0_config() const
{
    F0EstimatorConfig f;
    f.hop_samples = hop_samples;
    f.window_samples = f0_window;
    return f;
}

void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = nlohmann::json{{"unet", c.unet},
                       {"pitch_dim", c.pitch_dim},
                       {"loudness_dim", c.loudness_dim},
                       {"codebook_size", c.codebook_size},
                       {"sample_rate", c.sample_rate},
                       {"hop_samples", c.hop_samples},
                       {"f0_window", c.f0_window},
                       {"out_of_range", c.out_of_range == OutOfRangePolicy::Clamp ? "clamp" : "unvoiced"},
                       {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c)
{
    static const std::set<std::string> known{"unet",        "pitch_dim",   "loudness_dim", "codebook_size", "sample_rate",
                                             "hop_samples", "f0_window",   "out_of_range", "init_seed"};
    require(j.is_object(), ErrorCode::InvalidArgument, "model config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(known.count(it.key()) > 0, ErrorCode::UnknownConfigKey, "model." + it.key());
    if (j.contains("unet"))
        from_json(j["unet"], c.unet);
    c.pitch_dim = j.value("pitch_dim", c.pitch_dim);
    c.loudness_dim = j.value("loudness_dim", c.loudness_dim);
    c.codebook_size = j.value("codebook_size", c.codebook_size);
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.hop_samples = j.value("hop_samples", c.hop_samples);
    c.f0_window = j.value("f0_window", c.f0_window);
    if (j.contains("out_of_range")) {
        const auto p = j["out_of_range"].get<std::string>();
        require(p == "clamp" || p == "unvoiced", ErrorCode::InvalidArgument, "out_of_range must be clamp|unvoiced");
        c.out_of_range = p == "clamp" ? OutOfRangePolicy::Clamp : OutOfRangePolicy::Unvoiced;
    }
    c.init_seed = j.value("init_seed", c.init_seed);
    c.sync_derived();
}

ConditionIndices build_condition_indices(const AudioClip& segment, const Codebook& codebook, const ModelConfig& cfg)
{
    require(segment.size() == cfg.unet.input_length, ErrorCode::DimMismatch,
            "segment of " + std::to_string(segment.size()) + " samples, model expects " +
                std::to_string(cfg.unet.input_length));
    require(segment.sample_rate == cfg.sample_rate, ErrorCode::WrongSampleRate,
            "segment at " + std::to_string(segment.sample_rate) + " Hz, model runs at " +
                std::to_string(cfg.sample_rate));
    require(codebook.size() <= cfg.codebook_size, ErrorCode::DimMismatch,
            "codebook has " + std::to_string(codebook.size()) + " entries, model embeds " +
                std::to_string(cfg.codebook_size));

    ConditionIndices out;
    out.pitch = pitch_track(segment, cfg.f0_config(), cfg.out_of_range).indices;
    out.loudness = loudness_track(segment, codebook, out.pitch.size()).aligned_indices;
    return out;
}

template <typename T>
DiffusionModel<T>::DiffusionModel(const ModelConfig& cfg)
    : cfg_(cfg), pitch_table_("embed.pitch", {cfg.pitch_dim, static_cast<std::size_t>(kPitchTokens)}),
      loudness_table_("embed.loudness", {cfg.loudness_dim, cfg.codebook_size})
{
    cfg_.validate();
    unet_ = UNet<T>(cfg_.unet);
}

template <typename T>
void DiffusionModel<T>::init(std::uint64_t seed)
{
    unet_.init(seed);
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : pitch_table_.value.values())
        v = static_cast<T>(normal(rng));
    for (auto& v : loudness_table_.value.values())
        v = static_cast<T>(normal(rng));
}

template <typename T>
Tensor<T> DiffusionModel<T>::bundle(const ConditionIndices& cond) const
{
    require(cond.pitch.size() == cond.loudness.size(), ErrorCode::DimMismatch,
            "pitch and loudness tracks differ in length");
    PitchTrack track;
    track.indices = cond.pitch;
    track.hop_samples = cfg_.hop_samples;
    const Tensor<T> p = embed_pitch(track, pitch_table_.value);
    const Tensor<T> l = embed_loudness(std::span<const int>(cond.loudness), loudness_table_.value);
    const std::size_t frames = cond.frames();
    Tensor<T> out({frames, cfg_.pitch_dim + cfg_.loudness_dim});
    for (std::size_t t = 0; t < frames; ++t) {
        std::copy(p.row(t), p.row(t) + cfg_.pitch_dim, out.row(t));
        std::copy(l.row(t), l.row(t) + cfg_.loudness_dim, out.row(t) + cfg_.pitch_dim);
    }
    return out;
}

template <typename T>
Tensor<T> DiffusionModel<T>::forward_bundle(const Tensor<T>& x_t, double t, const Tensor<T>& bundle)
{
    require(bundle.rank() == 2, ErrorCode::DimMismatch, "conditioning bundle must be rank 2");
    // The U-Net wants channel-major [width, frames].
    const std::size_t frames = bundle.dim(0), width = bundle.dim(1);
    Tensor<T> cond({width, frames});
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t w = 0; w < width; ++w)
            cond(w, f) = bundle(f, w);
    recorded_.reset();
    return unet_.forward(x_t, t, cond);
}

template <typename T>
Tensor<T> DiffusionModel<T>::forward(const Tensor<T>& x_t, double t, const ConditionIndices& cond)
{
    Tensor<T> v = forward_bundle(x_t, t, bundle(cond));
    recorded_ = cond;
    return v;
}

template <typename T>
void DiffusionModel<T>::backward(const Tensor<T>& dv)
{
    const Tensor<T> dcond = unet_.backward(dv);
    if (!recorded_)
        return; // forward_bundle: the bundle was an input, nothing to scatter
    const auto& cond = *recorded_;
    for (std::size_t f = 0; f < cond.frames(); ++f) {
        const auto pi = static_cast<std::size_t>(cond.pitch[f]);
        const auto li = static_cast<std::size_t>(cond.loudness[f]);
        for (std::size_t d = 0; d < cfg_.pitch_dim; ++d)
            pitch_table_.grad(d, pi) += dcond(d, f);
        for (std::size_t d = 0; d < cfg_.loudness_dim; ++d)
            loudness_table_.grad(d, li) += dcond(cfg_.pitch_dim + d, f);
    }
    recorded_.reset();
}

template <typename T>
ParamRefs<T> DiffusionModel<T>::parameters()
{
    ParamRefs<T> out{&pitch_table_, &loudness_table_};
    auto rest = unet_.parameters();
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

template <typename T>
VelocityFn<T> DiffusionModel<T>::velocity(const ConditionIndices& cond)
{
    auto b = bundle(cond);
    return [this, b = std::move(b)](const Tensor<T>& x, double t) { return forward_bundle(x, t, b); };
}

template <typename T>
double loss_v_fixed(DiffusionModel<T>& model, const Tensor<T>& x0, const ConditionIndices& cond, double t,
                    const Tensor<T>& noise, bool accumulate, double grad_scale)
{
    const Tensor<T> x_t = q_sample(x0, noise, t);
    const Tensor<T> v = v_target(x0, noise, t);
    const Tensor<T> v_hat = model.forward(x_t, t, cond);
    const double loss = mean_squared_error(v_hat, v);
    if (accumulate) {
        Tensor<T> dv(v.dims());
        const double scale = 2.0 * grad_scale / static_cast<double>(v.size());
        for (std::size_t i = 0; i < v.size(); ++i)
            dv[i] = static_cast<T>(scale * (static_cast<double>(v_hat[i]) - v[i]));
        model.backward(dv);
    }
    return loss;
}

template <typename T>
double loss_v(DiffusionModel<T>& model, const std::vector<Tensor<T>>& x0_batch,
              const std::vector<ConditionIndices>& cond_batch, std::mt19937_64& rng, bool accumulate)
{
    require(!x0_batch.empty() && x0_batch.size() == cond_batch.size(), ErrorCode::DimMismatch,
            "batch and conditioning sizes differ");
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const double inv_b = 1.0 / static_cast<double>(x0_batch.size());
    double total = 0.0;
    for (std::size_t b = 0; b < x0_batch.size(); ++b) {
        const double t = uniform(rng);
        const Tensor<T> noise = standard_normal<T>(x0_batch[b].dims(), rng);
        total += loss_v_fixed(model, x0_batch[b], cond_batch[b], t, noise, accumulate, inv_b);
    }
    return total * inv_b;
}

template class DiffusionModel<float>;
template class DiffusionModel<double>;
template double loss_v(DiffusionModel<float>&, const std::vector<Tensor<float>>&, const std::vector<ConditionIndices>&,
                       std::mt19937_64&, bool);
template double loss_v(DiffusionModel<double>&, const std::vector<Tensor<double>>&,
                       const std::vector<ConditionIndices>&, std::mt19937_64&, bool);
template double loss_v_fixed(DiffusionModel<float>&, const Tensor<float>&, const ConditionIndices&, double,
                             const Tensor<float>&, bool, double);
template double loss_v_fixed(DiffusionModel<double>&, const Tensor<double>&, const ConditionIndices&, double,
                             const Tensor<double>&, bool, double);

} // namespace pt
