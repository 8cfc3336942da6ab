#include "pianotimbre/synthetic_dataset.hpp"
#include "pianotimbre/training.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>

using namespace pt;
using pt::test::code_of;
using pt::test::TempDir;

namespace {

TrainConfig tiny_config()
{
    TrainConfig c;
    c.segment_length = 1024;
    c.batch_size = 2;
    c.epochs = 1;
    c.learning_rate = 1e-3;
    c.seed = 17;
    auto& u = c.model.unet;
    u.base_channels = 8;
    u.channel_multipliers = {1, 2};
    u.downsample_factors = {4};
    u.attention_levels = {1};
    u.attention_heads = 2;
    u.time_embedding_dim = 8;
    u.norm_groups = 4;
    c.model.pitch_dim = 4;
    c.model.loudness_dim = 4;
    c.model.codebook_size = 4;
    c.model.hop_samples = 128;
    c.model.f0_window = 512;
    c.sync_model();
    return c;
}

Codebook small_codebook()
{
    Codebook cb;
    cb.centroids = {-70.0, -40.0, -20.0, -10.0};
    return cb;
}

std::vector<unsigned char> read_all(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_all(const std::filesystem::path& p, const std::vector<unsigned char>& b)
{
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

DatasetIndex write_corpus(const TempDir& dir, const std::vector<std::size_t>& lengths, bool silent = false)
{
    std::vector<std::filesystem::path> files;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        AudioClip c = silent ? AudioClip{std::vector<float>(lengths[i], 0.0f), 16000}
                             : pt::test::sine(300.0 + 100.0 * static_cast<double>(i), 0.3, lengths[i], 16000);
        const auto p = dir / ("c" + std::to_string(i) + ".wav");
        write_wav(c, p);
        files.push_back(p);
    }
    return build_index(files, dir.path());
}

} // namespace

TEST_CASE("crop_segment: exact, padded, seeded")
{
    std::mt19937_64 rng(50);
    AudioClip exact = pt::test::sine(440, 0.5, 100, 16000);
    for (int i = 0; i < 5; ++i)
        CHECK(crop_segment(exact, 100, rng).storage() == exact.samples);

    AudioClip shorter = pt::test::sine(440, 0.5, 90, 16000);
    const auto padded = crop_segment(shorter, 100, rng);
    REQUIRE(padded.dims() == Dims{1, 100});
    for (std::size_t i = 0; i < 90; ++i)
        CHECK(padded[i] == shorter.samples[i]);
    for (std::size_t i = 90; i < 100; ++i)
        CHECK(padded[i] == 0.0f);

    AudioClip longer = pt::test::sine(440, 0.5, 1000, 16000);
    std::mt19937_64 a(7), b(7);
    std::size_t off_a = 0, off_b = 0;
    const auto ca = crop_segment(longer, 64, a, off_a);
    const auto cb = crop_segment(longer, 64, b, off_b);
    CHECK(ca == cb);
    CHECK(off_a == off_b);
    REQUIRE(off_a + 64 <= 1000);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(ca[i] == longer.samples[off_a + i]);
}

TEST_CASE("conditioning: desk-scale rows and silence")
{
    TrainConfig desk;
    desk.sync_model();
    DiffusionModel<float> model(desk.model);
    const auto cb = small_codebook();
    const AudioClip silence{std::vector<float>(16384, 0.0f), 16000};
    const auto idx = build_condition_indices(silence, cb, desk.model);
    REQUIRE(idx.frames() == 32);
    for (std::size_t f = 0; f < 32; ++f) {
        CHECK(idx.pitch[f] == 0);
        CHECK(idx.loudness[f] == encode(-70.0, cb));
    }
    const auto bundle = build_conditioning(model, silence, cb);
    CHECK(bundle.dims() == Dims{16384 / 512, desk.model.pitch_dim + desk.model.loudness_dim});
    CHECK(bundle.dim(1) == 128);
}

TEST_CASE("train_step: first loss matches mean v^2, determinism, non-finite guard")
{
    const auto cfg = tiny_config();
    const auto cb = small_codebook();
    std::vector<AudioClip> batch{pt::test::sine(440, 0.4, 1024, 16000), pt::test::sine(660, 0.2, 1024, 16000)};

    DiffusionModel<float> m1(cfg.model);
    m1.init(1);
    std::mt19937_64 r1(5), oracle_rng(5);
    const double first = train_step(m1, batch, cb, cfg.adam(), r1);
    CHECK(std::isfinite(first));

    // Same draws as the loss: per element t, then standard-normal noise.
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double expected = 0;
    for (const auto& clip : batch) {
        const double t = u(oracle_rng);
        const auto noise = standard_normal<float>({1, 1024}, oracle_rng);
        const Tensor<float> x0({1, 1024}, clip.samples);
        const auto v = v_target(x0, noise, t);
        double s = 0;
        for (float e : v.values())
            s += static_cast<double>(e) * e;
        expected += s / 1024.0 / static_cast<double>(batch.size());
    }
    CHECK(std::abs(first - expected) < 1e-3);

    DiffusionModel<float> m2(cfg.model);
    m2.init(1);
    std::mt19937_64 r2(5);
    std::vector<double> t1{first}, t2{train_step(m2, batch, cb, cfg.adam(), r2)};
    for (int i = 0; i < 3; ++i) {
        t1.push_back(train_step(m1, batch, cb, cfg.adam(), r1));
        t2.push_back(train_step(m2, batch, cb, cfg.adam(), r2));
    }
    CHECK(t1 == t2);

    std::vector<Tensor<float>> bad{Tensor<float>({1, 1024}, std::nanf(""))};
    std::vector<ConditionIndices> conds{build_condition_indices(batch[0], cb, cfg.model)};
    const auto before = m1.parameters().front()->value;
    CHECK(code_of([&] { train_step(m1, bad, conds, cfg.adam(), r1); }) == ErrorCode::NonFiniteLoss);
    CHECK(m1.parameters().front()->value == before);
}

TEST_CASE("checkpoints: round trip and format gates")
{
    TempDir dir;
    const auto cfg = tiny_config();
    DiffusionModel<float> model(cfg.model);
    model.init(2);
    std::mt19937_64 rng(8);
    std::vector<AudioClip> batch{pt::test::sine(500, 0.3, 1024, 16000)};
    train_step(model, batch, small_codebook(), cfg.adam(), rng);

    save_checkpoint(model, {cfg, 1}, dir / "a.tpdm");
    auto loaded = load_checkpoint(dir / "a.tpdm");
    CHECK(loaded.info.step == 1);
    CHECK(loaded.info.config == cfg);
    const auto p1 = model.parameters();
    const auto p2 = loaded.model.parameters();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i]->value == p2[i]->value);
        CHECK(p1[i]->adam_m == p2[i]->adam_m);
        CHECK(p1[i]->adam_v == p2[i]->adam_v);
        CHECK(p1[i]->step_count == p2[i]->step_count);
    }
    const auto cond = build_condition_indices(batch[0], small_codebook(), cfg.model);
    CHECK(ddim_sample<float>(model.velocity(cond), {1, 1024}, 4, 9) ==
          ddim_sample<float>(loaded.model.velocity(cond), {1, 1024}, 4, 9));
    CHECK(checkpoint_bytes(model, {cfg, 1}) == read_all(dir / "a.tpdm"));

    auto bytes = read_all(dir / "a.tpdm");
    auto magic = bytes;
    magic[0] = 'X';
    write_all(dir / "magic.tpdm", magic);
    CHECK(code_of([&] { load_checkpoint(dir / "magic.tpdm"); }) == ErrorCode::BadMagic);

    auto version = bytes;
    version[4] = 7;
    write_all(dir / "version.tpdm", version);
    CHECK(code_of([&] { load_checkpoint(dir / "version.tpdm"); }) == ErrorCode::VersionMismatch);

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    write_all(dir / "short.tpdm", truncated);
    CHECK(code_of([&] { load_checkpoint(dir / "short.tpdm"); }) == ErrorCode::IoFailure);

    auto other_cfg = cfg;
    other_cfg.model.unet.base_channels = 4;
    other_cfg.model.unet.norm_groups = 2;
    DiffusionModel<float> other(other_cfg.model);
    CHECK(code_of([&] { load_checkpoint_into(other, dir / "a.tpdm"); }) == ErrorCode::TensorDimMismatch);
    CHECK(code_of([&] { load_checkpoint(dir / "none.tpdm"); }) == ErrorCode::MissingFile);
}

TEST_CASE("codebook from corpus: pool size, silence, determinism")
{
    TempDir dir;
    const auto idx = write_corpus(dir, {3 * 1024, 1024, 512});
    CHECK(segments_per_clip(3 * 1024, 1024) == 3);
    CHECK(segments_per_clip(3 * 1024 + 1000, 1024) == 3);
    CHECK(segments_per_clip(512, 1024) == 1);
    CHECK(loudness_pool(idx, 1024).size() == (3 + 1 + 1) * 16);
    CHECK(fit_codebook_from_corpus(idx, 3, 1024).centroids == fit_codebook_from_corpus(idx, 3, 1024).centroids);

    TempDir quiet;
    const auto qidx = write_corpus(quiet, {2048}, true);
    CHECK(fit_codebook_from_corpus(qidx, 1, 1024).centroids == std::vector<double>{-70.0});
}

TEST_CASE("train config JSON")
{
    const auto cfg = tiny_config();
    nlohmann::json j = cfg;
    CHECK(j.get<TrainConfig>() == cfg);
    j["bogus"] = 1;
    CHECK_THROWS(j.get<TrainConfig>());

    auto bad = cfg;
    bad.segment_length = 2048;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::DimMismatch);
    bad = cfg;
    bad.batch_size = 0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("trainer: epochs, outputs, resume equivalence")
{
    TempDir dir;
    const auto idx = write_corpus(dir, {2000, 1500, 1024});
    auto cfg = tiny_config();
    cfg.epochs = 2;
    const auto cb = small_codebook();

    Trainer straight(cfg, idx, cb);
    CHECK(straight.steps_per_epoch() == 2);
    CHECK(straight.total_steps() == 4);
    straight.run(dir / "straight");
    CHECK(straight.done());
    CHECK(std::filesystem::exists(dir / "straight" / "checkpoint.tpdm"));
    {
        std::ifstream csv(dir / "straight" / "loss.csv");
        std::string line;
        std::getline(csv, line);
        CHECK(line == "step,loss");
        int rows = 0;
        while (std::getline(csv, line))
            ++rows;
        CHECK(rows == 4);
    }

    auto half_cfg = cfg;
    half_cfg.max_steps = 2;
    Trainer first(half_cfg, idx, cb);
    first.run(dir / "half");
    CHECK(first.step() == 2);

    Trainer second(cfg, idx, cb);
    second.resume(dir / "half" / "checkpoint.tpdm");
    CHECK(second.step() == 2);
    second.run(dir / "resumed");
    const auto a = straight.model().parameters();
    const auto b = second.model().parameters();
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a[i]->value == b[i]->value);

    auto other = cfg;
    other.model.pitch_dim = 8;
    other.sync_model();
    Trainer mismatched(other, idx, cb);
    CHECK(code_of([&] { mismatched.resume(dir / "half" / "checkpoint.tpdm"); }) != static_cast<ErrorCode>(0));

    auto every = cfg;
    every.checkpoint_every = 2;
    Trainer periodic(every, idx, cb);
    periodic.run(dir / "periodic");
    CHECK(std::filesystem::exists(dir / "periodic" / "checkpoint_00000002.tpdm"));
    CHECK(std::filesystem::exists(dir / "periodic" / "checkpoint_00000004.tpdm"));
}
