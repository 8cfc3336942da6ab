#include "pianotimbre/pianotimbre.h"

#include "pianotimbre/evaluation.hpp"
#include "pianotimbre/log.hpp"
#include "pianotimbre/run_config.hpp"
#include "pianotimbre/synthetic_dataset.hpp"
#include "pianotimbre/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>

struct pt_clip {
    pt::AudioClip clip;
};

struct pt_codebook {
    pt::Codebook codebook;
};

struct pt_trainer {
    std::optional<pt::Trainer> trainer;
};

struct pt_model {
    pt::CheckpointInfo info;
    pt::DiffusionModel<float> model;
};

namespace {

thread_local std::string g_last_error;

pt_status set_error(pt_status status, const std::string& message)
{
    g_last_error = message;
    return status;
}

template <typename F>
pt_status guarded(F&& body)
{
    try {
        body();
        return PT_OK;
    } catch (const pt::Error& e) {
        return set_error(static_cast<pt_status>(static_cast<int>(e.code())), e.what());
    } catch (const std::bad_alloc&) {
        return set_error(PT_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return set_error(PT_ERR_INTERNAL, e.what());
    } catch (...) {
        return set_error(PT_ERR_INTERNAL, "unknown failure");
    }
}

void need(const void* p, const char* what)
{
    pt::require(p != nullptr, pt::ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s)
{
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out)
        throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

pt::RunConfig config_of(const char* json)
{
    return pt::parse_run_config(json ? json : "");
}

} // namespace

extern "C" {

const char* pt_version(void)
{
    return "0.1.0";
}

const char* pt_status_name(pt_status status)
{
    if (status == PT_OK)
        return "Ok";
    if (status == PT_ERR_INTERNAL)
        return "Internal";
    if (status >= PT_ERR_INVALID_ARGUMENT && status <= PT_ERR_UNKNOWN_CONFIG_KEY)
        return pt::error_code_name(static_cast<pt::ErrorCode>(static_cast<int>(status)));
    return "Unknown";
}

const char* pt_last_error(void)
{
    return g_last_error.c_str();
}

void pt_string_free(char* s)
{
    std::free(s);
}

void pt_set_log_callback(pt_log_fn fn, void* user)
{
    if (!fn) {
        pt::set_log_sink({});
        return;
    }
    pt::set_log_sink([fn, user](pt::LogLevel level, const std::string& msg) {
        fn(static_cast<pt_log_level>(static_cast<int>(level)), msg.c_str(), user);
    });
}

pt_status pt_config_resolve(const char* json, char** resolved_json)
{
    return guarded([&] {
        need(resolved_json, "resolved_json");
        *resolved_json = dup_string(pt::run_config_to_string(config_of(json)));
    });
}

pt_status pt_clip_read(const char* path, pt_clip** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new pt_clip{pt::read_wav_mono(path)};
    });
}

pt_status pt_clip_from_samples(const float* samples, size_t length, int sample_rate, pt_clip** out)
{
    return guarded([&] {
        need(out, "out");
        pt::require(length == 0 || samples != nullptr, pt::ErrorCode::InvalidArgument, "samples must not be NULL");
        pt::require(sample_rate > 0, pt::ErrorCode::InvalidArgument, "sample rate must be positive");
        *out = new pt_clip{pt::AudioClip{std::vector<float>(samples, samples + length), sample_rate}};
    });
}

pt_status pt_clip_write(const pt_clip* clip, const char* path, int float32, size_t* clipped)
{
    return guarded([&] {
        need(clip, "clip");
        need(path, "path");
        const auto n = pt::write_wav(clip->clip, path, float32 ? pt::WavEncoding::Float32 : pt::WavEncoding::Pcm16);
        if (clipped)
            *clipped = n;
    });
}

size_t pt_clip_length(const pt_clip* clip)
{
    return clip ? clip->clip.size() : 0;
}

int pt_clip_sample_rate(const pt_clip* clip)
{
    return clip ? clip->clip.sample_rate : 0;
}

const float* pt_clip_samples(const pt_clip* clip)
{
    return clip ? clip->clip.samples.data() : nullptr;
}

void pt_clip_free(pt_clip* clip)
{
    delete clip;
}

pt_status pt_synth_corpus(const char* config_json, const char* out_dir, size_t* clips_written)
{
    return guarded([&] {
        need(out_dir, "out_dir");
        const auto cfg = config_of(config_json);
        pt::CorpusOptions opts;
        opts.clip_seconds = cfg.synth.seconds;
        opts.sample_rate = cfg.synth.sample_rate;
        opts.octave_down = cfg.synth.octave_down;
        const auto index =
            pt::generate_corpus(cfg.synth.clips, pt::preset_by_name(cfg.synth.preset), cfg.synth.seed, out_dir, opts);
        if (clips_written)
            *clips_written = index.size();
    });
}

pt_status pt_codebook_fit(const char* config_json, const char* manifest_path, pt_codebook** out)
{
    return guarded([&] {
        need(manifest_path, "manifest_path");
        need(out, "out");
        const auto cfg = config_of(config_json);
        const auto index = pt::load_manifest(manifest_path);
        *out = new pt_codebook{pt::fit_codebook_from_corpus(index, cfg.codebook.k, cfg.train.segment_length,
                                                            pt::codebook_fit_options(cfg.codebook))};
    });
}

pt_status pt_codebook_load(const char* path, pt_codebook** out)
{
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        *out = new pt_codebook{pt::load_codebook(path)};
    });
}

pt_status pt_codebook_save(const pt_codebook* codebook, const char* path)
{
    return guarded([&] {
        need(codebook, "codebook");
        need(path, "path");
        pt::save_codebook(codebook->codebook, path);
    });
}

size_t pt_codebook_size(const pt_codebook* codebook)
{
    return codebook ? codebook->codebook.size() : 0;
}

double pt_codebook_centroid(const pt_codebook* codebook, size_t index)
{
    if (!codebook || index >= codebook->codebook.size())
        return 0.0;
    return codebook->codebook.centroids[index];
}

void pt_codebook_free(pt_codebook* codebook)
{
    delete codebook;
}

pt_status pt_trainer_create(const char* config_json, const char* manifest_path, const pt_codebook* codebook,
                            pt_trainer** out)
{
    return guarded([&] {
        need(manifest_path, "manifest_path");
        need(codebook, "codebook");
        need(out, "out");
        const auto cfg = config_of(config_json);
        auto t = std::make_unique<pt_trainer>();
        t->trainer.emplace(cfg.train, pt::load_manifest(manifest_path), codebook->codebook);
        *out = t.release();
    });
}

pt_status pt_trainer_resume(pt_trainer* trainer, const char* checkpoint_path)
{
    return guarded([&] {
        need(trainer, "trainer");
        need(checkpoint_path, "checkpoint_path");
        trainer->trainer->resume(checkpoint_path);
    });
}

pt_status pt_trainer_step(pt_trainer* trainer, double* loss)
{
    return guarded([&] {
        need(trainer, "trainer");
        const double l = trainer->trainer->run_step();
        if (loss)
            *loss = l;
    });
}

pt_status pt_trainer_run(pt_trainer* trainer, const char* out_dir, pt_progress_fn progress, void* user)
{
    return guarded([&] {
        need(trainer, "trainer");
        need(out_dir, "out_dir");
        std::function<bool(long, double)> cb;
        if (progress)
            cb = [progress, user](long step, double loss) { return progress(step, loss, user) != 0; };
        trainer->trainer->run(out_dir, cb);
    });
}

pt_status pt_trainer_save(const pt_trainer* trainer, const char* checkpoint_path)
{
    return guarded([&] {
        need(trainer, "trainer");
        need(checkpoint_path, "checkpoint_path");
        auto& t = const_cast<pt::Trainer&>(*trainer->trainer);
        pt::save_checkpoint(t.model(), t.info(), checkpoint_path);
    });
}

long pt_trainer_current_step(const pt_trainer* trainer)
{
    return trainer ? trainer->trainer->step() : 0;
}

long pt_trainer_total_steps(const pt_trainer* trainer)
{
    return trainer ? trainer->trainer->total_steps() : 0;
}

void pt_trainer_free(pt_trainer* trainer)
{
    delete trainer;
}

pt_status pt_model_load(const char* checkpoint_path, pt_model** out)
{
    return guarded([&] {
        need(checkpoint_path, "checkpoint_path");
        need(out, "out");
        auto loaded = pt::load_checkpoint(checkpoint_path);
        *out = new pt_model{std::move(loaded.info), std::move(loaded.model)};
    });
}

pt_status pt_model_config(const pt_model* model, char** train_config_json)
{
    return guarded([&] {
        need(model, "model");
        need(train_config_json, "train_config_json");
        *train_config_json = dup_string(nlohmann::json(model->info.config).dump(2) + "\n");
    });
}

long pt_model_step(const pt_model* model)
{
    return model ? model->info.step : 0;
}

pt_status pt_model_convert(pt_model* model, const pt_codebook* codebook, const pt_clip* input, const char* config_json,
                           pt_clip** out)
{
    return guarded([&] {
        need(model, "model");
        need(codebook, "codebook");
        need(input, "input");
        need(out, "out");
        const auto cfg = config_of(config_json);
        *out = new pt_clip{pt::convert_clip(model->model, codebook->codebook, input->clip, cfg.convert)};
    });
}

pt_status pt_model_save(const pt_model* model, const char* checkpoint_path)
{
    return guarded([&] {
        need(model, "model");
        need(checkpoint_path, "checkpoint_path");
        pt::save_checkpoint(model->model, model->info, checkpoint_path);
    });
}

void pt_model_free(pt_model* model)
{
    delete model;
}

pt_status pt_evaluate(const pt_clip* source, const pt_clip* converted, const char* config_json, const char* out_dir,
                      const char* source_name, const char* converted_name, const char* checkpoint_id,
                      pt_eval_summary* summary)
{
    return guarded([&] {
        need(source, "source");
        need(converted, "converted");
        need(out_dir, "out_dir");
        const auto cfg = config_of(config_json);
        auto report = pt::evaluate(source->clip, converted->clip, pt::eval_options(cfg.evaluate));
        report.source_file = source_name ? source_name : "";
        report.converted_file = converted_name ? converted_name : "";
        report.checkpoint_id = checkpoint_id ? checkpoint_id : "";
        pt::write_report(report, out_dir);
        if (summary) {
            summary->pitch_accuracy = report.pitch_accuracy;
            summary->mean_abs_difference_lu = report.mean_abs_difference_lu;
            summary->max_abs_difference_lu = report.max_abs_difference_lu;
            summary->windows = report.difference.size();
        }
    });
}

} // extern "C"
