#include "pianotimbre/training.hpp"

#include "fileutil.hpp"
#include "pianotimbre/loudness_encoder.hpp"
#include "pianotimbre/log.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace pt {

// ---------------------------------------------------------------- config

void TrainConfig::sync_model()
{
    model.sample_rate = sample_rate;
    model.unet.input_length = segment_length;
    model.sync_derived();
}

void TrainConfig::validate() const
{
    require(sample_rate > 0, ErrorCode::InvalidArgument, "sample_rate must be positive");
    require(segment_length >= 1, ErrorCode::InvalidArgument, "segment_length must be >= 1");
    require(batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
    require(epochs >= 0 && max_steps >= 0, ErrorCode::InvalidArgument, "epochs and max_steps must be >= 0");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::InvalidArgument,
            "learning_rate must be positive");
    require(checkpoint_every >= 0, ErrorCode::InvalidArgument, "checkpoint_every must be >= 0");
    require(segment_length == model.unet.input_length, ErrorCode::DimMismatch,
            "segment_length " + std::to_string(segment_length) + " differs from unet.input_length " +
                std::to_string(model.unet.input_length));
    require(sample_rate == model.sample_rate, ErrorCode::InvalidArgument,
            "sample_rate differs from model.sample_rate");
    model.validate();
}

AdamConfig TrainConfig::adam() const
{
    AdamConfig a;
    a.learning_rate = learning_rate;
    return a;
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = nlohmann::json{{"sample_rate", c.sample_rate},
                       {"segment_length", c.segment_length},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"max_steps", c.max_steps},
                       {"learning_rate", c.learning_rate},
                       {"seed", c.seed},
                       {"codebook_path", c.codebook_path},
                       {"checkpoint_every", c.checkpoint_every},
                       {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    static const std::set<std::string> known{"sample_rate",   "segment_length", "batch_size",
                                             "epochs",        "max_steps",      "learning_rate",
                                             "seed",          "codebook_path",  "checkpoint_every",
                                             "model"};
    require(j.is_object(), ErrorCode::InvalidArgument, "train config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        require(known.count(it.key()) > 0, ErrorCode::UnknownConfigKey, it.key());
    try {
        if (j.contains("model"))
            from_json(j["model"], c.model);
        const bool model_len = j.contains("model") && j["model"].contains("unet") &&
                               j["model"]["unet"].contains("input_length");
        const bool model_rate = j.contains("model") && j["model"].contains("sample_rate");
        c.segment_length = j.contains("segment_length") ? j["segment_length"].get<std::size_t>()
                           : model_len                  ? c.model.unet.input_length
                                                        : c.segment_length;
        c.sample_rate = j.contains("sample_rate") ? j["sample_rate"].get<int>()
                        : model_rate              ? c.model.sample_rate
                                                  : c.sample_rate;
        if (model_len)
            require(c.model.unet.input_length == c.segment_length, ErrorCode::DimMismatch,
                    "segment_length and model.unet.input_length disagree");
        if (model_rate)
            require(c.model.sample_rate == c.sample_rate, ErrorCode::InvalidArgument,
                    "sample_rate and model.sample_rate disagree");
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.seed = j.value("seed", c.seed);
        c.codebook_path = j.value("codebook_path", c.codebook_path);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("bad train config value: ") + e.what());
    }
    c.sync_model();
}

// ---------------------------------------------------------------- segments

Tensor<float> crop_segment(const AudioClip& clip, std::size_t n, std::mt19937_64& rng, std::size_t& offset)
{
    require(n >= 1, ErrorCode::InvalidArgument, "segment length must be >= 1");
    Tensor<float> out({1, n});
    offset = 0;
    if (clip.size() >= n) {
        std::uniform_int_distribution<std::size_t> pick(0, clip.size() - n);
        offset = pick(rng);
        std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset), n, out.data());
    } else {
        std::copy(clip.samples.begin(), clip.samples.end(), out.data());
    }
    return out;
}

Tensor<float> crop_segment(const AudioClip& clip, std::size_t n, std::mt19937_64& rng)
{
    std::size_t offset = 0;
    return crop_segment(clip, n, rng, offset);
}

Tensor<float> build_conditioning(const DiffusionModel<float>& model, const AudioClip& segment,
                                 const Codebook& codebook)
{
    return model.bundle(build_condition_indices(segment, codebook, model.config()));
}

double train_step(DiffusionModel<float>& model, const std::vector<Tensor<float>>& batch,
                  const std::vector<ConditionIndices>& conditions, const AdamConfig& adam, std::mt19937_64& rng)
{
    require(!batch.empty(), ErrorCode::EmptyInput, "empty training batch");
    const auto params = model.parameters();
    zero_grads(params);
    const double loss = loss_v(model, batch, conditions, rng, true);
    if (!std::isfinite(loss))
        fail(ErrorCode::NonFiniteLoss, "training loss is " + std::to_string(loss));
    adam_step(params, adam);
    return loss;
}

double train_step(DiffusionModel<float>& model, const std::vector<AudioClip>& batch, const Codebook& codebook,
                  const AdamConfig& adam, std::mt19937_64& rng)
{
    require(!batch.empty(), ErrorCode::EmptyInput, "empty training batch");
    std::vector<Tensor<float>> xs;
    std::vector<ConditionIndices> conds;
    for (const auto& clip : batch) {
        xs.emplace_back(Dims{1, clip.size()}, clip.samples);
        conds.push_back(build_condition_indices(clip, codebook, model.config()));
    }
    return train_step(model, xs, conds, adam, rng);
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'T', 'P', 'D', 'M'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32(std::vector<unsigned char>& out, float f)
{
    put_u32(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
public:
    explicit Reader(std::span<const unsigned char> b) : bytes_(b) {}

    bool at_end() const noexcept { return pos_ == bytes_.size(); }

    std::span<const unsigned char> take(std::size_t n)
    {
        if (bytes_.size() - pos_ < n)
            fail(ErrorCode::IoFailure, "checkpoint is truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32()
    {
        const auto s = take(4);
        return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
               static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
    }

private:
    std::span<const unsigned char> bytes_;
    std::size_t pos_ = 0;
};

void put_tensor(std::vector<unsigned char>& out, const std::string& name, const Tensor<float>& t)
{
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.dims())
        put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.values())
        put_f32(out, v);
}

struct Parsed {
    nlohmann::json header;
    std::map<std::string, Tensor<float>> tensors;
};

Parsed parse_checkpoint(std::span<const unsigned char> bytes)
{
    Reader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        fail(ErrorCode::BadMagic, "not a TPDM checkpoint");
    r.take(4);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        fail(ErrorCode::VersionMismatch, "checkpoint format version " + std::to_string(version) + " (expected " +
                                             std::to_string(kCheckpointVersion) + ")");
    const auto json_bytes = r.take(r.u32());
    Parsed p;
    try {
        p.header = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, std::string("checkpoint config: ") + e.what());
    }
    while (!r.at_end()) {
        const auto name_bytes = r.take(r.u32());
        std::string name(name_bytes.begin(), name_bytes.end());
        const std::uint32_t rank = r.u32();
        require(rank >= 1 && rank <= 8, ErrorCode::MalformedHeader, "tensor " + name + " has rank " +
                                                                        std::to_string(rank));
        Dims dims;
        for (std::uint32_t i = 0; i < rank; ++i)
            dims.push_back(r.u32());
        Tensor<float> t(dims);
        const auto payload = r.take(t.size() * 4);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto* b = payload.data() + 4 * i;
            const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                                    static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
            t[i] = std::bit_cast<float>(u);
        }
        p.tensors.emplace(std::move(name), std::move(t));
    }
    if (p.header.contains("tensor_count"))
        require(p.header["tensor_count"].get<std::size_t>() == p.tensors.size(), ErrorCode::IoFailure,
                "checkpoint lists " + p.header["tensor_count"].dump() + " tensors, found " +
                    std::to_string(p.tensors.size()));
    return p;
}

CheckpointInfo info_from_header(const nlohmann::json& header)
{
    CheckpointInfo info;
    try {
        info.config = header.at("train").get<TrainConfig>();
        info.step = header.at("step").get<long>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, std::string("checkpoint config: ") + e.what());
    }
    return info;
}

void apply_tensors(DiffusionModel<float>& model, const Parsed& p)
{
    const long adam_steps = p.header.value("adam_steps", 0L);
    std::set<std::string> used;
    for (auto* param : model.parameters()) {
        const auto assign = [&](const std::string& name, Tensor<float>& dst, bool required) {
            const auto it = p.tensors.find(name);
            if (it == p.tensors.end()) {
                require(!required, ErrorCode::TensorDimMismatch, "checkpoint has no tensor " + name);
                dst.zero();
                return;
            }
            require(it->second.dims() == dst.dims(), ErrorCode::TensorDimMismatch,
                    "tensor " + name + " is " + dims_to_string(it->second.dims()) + " in the checkpoint, model expects " +
                        dims_to_string(dst.dims()));
            dst = it->second;
            used.insert(name);
        };
        assign(param->name, param->value, true);
        assign(param->name + ".adam_m", param->adam_m, false);
        assign(param->name + ".adam_v", param->adam_v, false);
        param->grad.zero();
        param->step_count = adam_steps;
    }
    for (const auto& [name, t] : p.tensors)
        require(used.count(name) > 0, ErrorCode::TensorDimMismatch, "checkpoint tensor " + name +
                                                                        " has no counterpart in the model");
}

} // namespace

std::vector<unsigned char> checkpoint_bytes(const DiffusionModel<float>& model, const CheckpointInfo& info)
{
    auto& m = const_cast<DiffusionModel<float>&>(model);
    const auto params = m.parameters();
    long adam_steps = 0;
    for (const auto* p : params)
        adam_steps = std::max(adam_steps, p->step_count);
    const bool with_moments = adam_steps > 0;

    nlohmann::json header{{"train", info.config},
                          {"step", info.step},
                          {"adam_steps", adam_steps},
                          {"tensor_count", params.size() * (with_moments ? 3 : 1)}};
    const std::string text = header.dump();

    std::vector<unsigned char> out(kMagic, kMagic + 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto* p : params) {
        put_tensor(out, p->name, p->value);
        if (with_moments) {
            put_tensor(out, p->name + ".adam_m", p->adam_m);
            put_tensor(out, p->name + ".adam_v", p->adam_v);
        }
    }
    return out;
}

void save_checkpoint(const DiffusionModel<float>& model, const CheckpointInfo& info, const std::filesystem::path& path)
{
    const auto bytes = checkpoint_bytes(model, info);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorCode::IoFailure, "cannot write checkpoint " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out)
            fail(ErrorCode::IoFailure, "write failed for " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot move checkpoint into place: " + ec.message());
}

LoadedCheckpoint checkpoint_from_bytes(std::span<const unsigned char> bytes)
{
    const Parsed p = parse_checkpoint(bytes);
    LoadedCheckpoint out{info_from_header(p.header), {}};
    out.model = DiffusionModel<float>(out.info.config.model);
    apply_tensors(out.model, p);
    return out;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    return checkpoint_from_bytes(detail::read_bytes(path));
}

CheckpointInfo load_checkpoint_into(DiffusionModel<float>& model, const std::filesystem::path& path)
{
    const auto bytes = detail::read_bytes(path);
    const Parsed p = parse_checkpoint(bytes);
    auto info = info_from_header(p.header);
    apply_tensors(model, p);
    return info;
}

// ---------------------------------------------------------------- codebook

std::size_t segments_per_clip(std::size_t samples, std::size_t segment_length)
{
    require(segment_length >= 1, ErrorCode::InvalidArgument, "segment_length must be >= 1");
    return std::max<std::size_t>(1, samples / segment_length);
}

std::vector<double> loudness_pool(const DatasetIndex& index, std::size_t segment_length)
{
    require(!index.empty(), ErrorCode::EmptyInput, "corpus is empty");
    std::vector<double> pool;
    for (const auto& e : index.entries) {
        const AudioClip clip = read_wav_mono(index.path_of(e));
        const std::size_t n = segments_per_clip(clip.size(), segment_length);
        for (std::size_t s = 0; s < n; ++s) {
            AudioClip seg;
            seg.sample_rate = clip.sample_rate;
            seg.samples.assign(segment_length, 0.0f);
            const std::size_t begin = s * segment_length;
            const std::size_t count = std::min(segment_length, clip.size() - std::min(begin, clip.size()));
            std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin), count, seg.samples.begin());
            const auto v = segment_loudness(seg);
            pool.insert(pool.end(), v.values.begin(), v.values.end());
        }
    }
    return pool;
}

Codebook fit_codebook_from_corpus(const DatasetIndex& index, int k, std::size_t segment_length,
                                  const CodebookFitOptions& opts)
{
    const auto pool = loudness_pool(index, segment_length);
    return fit_codebook(pool, k, opts);
}

// ---------------------------------------------------------------- trainer

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

constexpr std::size_t kConditionCacheLimit = 4096;

} // namespace

Trainer::Trainer(TrainConfig cfg, DatasetIndex index, Codebook codebook)
    : cfg_(std::move(cfg)), index_(std::move(index)), codebook_(std::move(codebook))
{
    cfg_.validate();
    require(!index_.empty(), ErrorCode::EmptyInput, "training corpus is empty");
    require(!codebook_.empty(), ErrorCode::EmptyCodebook, "training needs a loudness codebook");
    require(codebook_.size() <= cfg_.model.codebook_size, ErrorCode::DimMismatch,
            "codebook has " + std::to_string(codebook_.size()) + " entries, model embeds " +
                std::to_string(cfg_.model.codebook_size));
    model_ = DiffusionModel<float>(cfg_.model);
    model_.init(cfg_.model.init_seed);
    load_clips();
}

void Trainer::load_clips()
{
    for (const auto& e : index_.entries) {
        AudioClip clip = read_wav_mono(index_.path_of(e));
        if (clip.sample_rate != cfg_.sample_rate)
            clip = resample(clip, cfg_.sample_rate);
        clips_.push_back(std::move(clip));
    }
}

void Trainer::resume(const std::filesystem::path& checkpoint)
{
    const auto info = load_checkpoint_into(model_, checkpoint);
    require(info.config.model == cfg_.model, ErrorCode::TensorDimMismatch,
            "checkpoint model config differs from the training config");
    step_ = info.step;
    planned_epoch_ = -1;
}

long Trainer::steps_per_epoch() const noexcept
{
    const auto b = static_cast<long>(cfg_.batch_size);
    return (static_cast<long>(clips_.size()) + b - 1) / b;
}

long Trainer::total_steps() const noexcept
{
    return cfg_.max_steps > 0 ? cfg_.max_steps : steps_per_epoch() * cfg_.epochs;
}

void Trainer::plan_epoch(long epoch)
{
    order_.resize(clips_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    auto rng = derived_rng(cfg_.seed, 0x45504f4348ull, static_cast<std::uint64_t>(epoch));
    std::shuffle(order_.begin(), order_.end(), rng);
    planned_epoch_ = epoch;
}

double Trainer::run_step()
{
    const long spe = steps_per_epoch();
    const long epoch = step_ / spe;
    if (epoch != planned_epoch_)
        plan_epoch(epoch);
    const std::size_t first = static_cast<std::size_t>(step_ % spe) * cfg_.batch_size;
    const std::size_t last = std::min(first + cfg_.batch_size, order_.size());

    // Per-step generator.
    auto rng = derived_rng(cfg_.seed, 0x53544550ull, static_cast<std::uint64_t>(step_));
    std::vector<Tensor<float>> xs;
    std::vector<ConditionIndices> conds;
    for (std::size_t i = first; i < last; ++i) {
        const std::size_t c = order_[i];
        std::size_t offset = 0;
        Tensor<float> x = crop_segment(clips_[c], cfg_.segment_length, rng, offset);
        const auto key = std::make_pair(c, offset);
        auto it = cond_cache_.find(key);
        if (it == cond_cache_.end()) {
            AudioClip seg{x.storage(), cfg_.sample_rate};
            ConditionIndices ci = build_condition_indices(seg, codebook_, cfg_.model);
            if (cond_cache_.size() >= kConditionCacheLimit)
                cond_cache_.clear();
            it = cond_cache_.emplace(key, std::move(ci)).first;
        }
        conds.push_back(it->second);
        xs.push_back(std::move(x));
    }
    double loss = 0.0;
    try {
        loss = train_step(model_, xs, conds, cfg_.adam(), rng);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonFiniteLoss)
            fail(ErrorCode::NonFiniteLoss, "step " + std::to_string(step_ + 1) + ": " + e.what());
        throw;
    }
    ++step_;
    return loss;
}

void Trainer::run(const std::filesystem::path& out_dir, const std::function<bool(long, double)>& on_step)
{
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec)
        fail(ErrorCode::IoFailure, "cannot create " + out_dir.string() + ": " + ec.message());
    const auto log_path = out_dir / "loss.csv";
    const bool append = step_ > 0 && std::filesystem::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log)
        fail(ErrorCode::IoFailure, "cannot write " + log_path.string());
    if (!append)
        log << "step,loss\n";
    log.precision(9);

    while (!done()) {
        double loss = 0.0;
        try {
            loss = run_step();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NonFiniteLoss)
                log_message(LogLevel::Error, e.what());
            throw;
        }
        log << step_ << ',' << loss << '\n';
        if (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof name, "checkpoint_%08ld.tpdm", step_);
            save_checkpoint(model_, info(), out_dir / name);
        }
        if (on_step && !on_step(step_, loss))
            break;
    }
    log.flush();
    save_checkpoint(model_, info(), out_dir / "checkpoint.tpdm");
}

} // namespace pt
