#include "pianotimbre/pianotimbre.h"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct RuntimeFailure {
    std::string message;
};

void check(pt_status status, const std::string& context)
{
    if (status != PT_OK)
        throw RuntimeFailure{context + ": " + pt_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
    void operator()(T* p) const { Free(p); }
};
using ClipPtr = std::unique_ptr<pt_clip, Deleter<pt_clip, pt_clip_free>>;
using CodebookPtr = std::unique_ptr<pt_codebook, Deleter<pt_codebook, pt_codebook_free>>;
using TrainerPtr = std::unique_ptr<pt_trainer, Deleter<pt_trainer, pt_trainer_free>>;
using ModelPtr = std::unique_ptr<pt_model, Deleter<pt_model, pt_model_free>>;

std::string take_string(char* s)
{
    std::string out(s ? s : "");
    pt_string_free(s);
    return out;
}

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw RuntimeFailure{"cannot read " + p.string()};
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out)
        throw RuntimeFailure{"cannot write " + p.string()};
}

void ensure_dir(const fs::path& p)
{
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec)
        throw RuntimeFailure{"cannot create " + p.string() + ": " + ec.message()};
}

/// Config file (or defaults) with command-line overrides applied, validated
/// and completed by the library.
class ConfigBuilder {
public:
    void load(const std::string& path)
    {
        if (path.empty())
            return;
        try {
            doc_ = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw RuntimeFailure{"config " + path + " is not valid JSON: " + e.what()};
        }
    }

    bool has(const std::string& section, const std::string& key) const
    {
        return doc_.contains(section) && doc_[section].is_object() && doc_[section].contains(key);
    }

    template <typename T>
    void set(const std::string& section, const std::string& key, const std::optional<T>& value)
    {
        if (value)
            doc_[section][key] = *value;
    }

    void set_json(const nlohmann::json::json_pointer& ptr, const nlohmann::json& v) { doc_[ptr] = v; }
    bool contains(const nlohmann::json::json_pointer& ptr) const { return doc_.contains(ptr); }

    std::string resolve() const
    {
        char* out = nullptr;
        check(pt_config_resolve(doc_.is_null() ? "" : doc_.dump().c_str(), &out), "config");
        return take_string(out);
    }

private:
    nlohmann::json doc_;
};

void echo_config(const fs::path& path, const std::string& resolved)
{
    write_file(path, resolved);
}

int run_synth(const std::string& config, const std::string& out, const std::optional<int>& clips,
              const std::optional<double>& seconds, const std::optional<std::string>& preset,
              const std::optional<std::uint64_t>& seed, const std::optional<int>& rate, bool octave_down)
{
    ConfigBuilder cb;
    cb.load(config);
    cb.set("synth", "clips", clips);
    cb.set("synth", "seconds", seconds);
    cb.set("synth", "preset", preset);
    cb.set("synth", "seed", seed);
    cb.set("synth", "sample_rate", rate);
    if (octave_down)
        cb.set("synth", "octave_down", std::optional<bool>(true));
    const auto resolved = cb.resolve();
    ensure_dir(out);
    size_t written = 0;
    check(pt_synth_corpus(resolved.c_str(), out.c_str(), &written), "synth-data");
    echo_config(fs::path(out) / "config.json", resolved);
    std::cout << "wrote " << written << " clips and manifest.json to " << out << '\n';
    return kExitOk;
}

int run_fit_codebook(const std::string& config, const std::string& manifest, const std::string& out,
                     const std::optional<int>& k, const std::optional<std::size_t>& segment_length)
{
    ConfigBuilder cb;
    cb.load(config);
    cb.set("codebook", "k", k);
    cb.set("train", "segment_length", segment_length);
    const auto resolved = cb.resolve();
    pt_codebook* raw = nullptr;
    check(pt_codebook_fit(resolved.c_str(), manifest.c_str(), &raw), "fit-codebook");
    CodebookPtr book(raw);
    const fs::path out_path(out);
    if (out_path.has_parent_path())
        ensure_dir(out_path.parent_path());
    check(pt_codebook_save(book.get(), out.c_str()), "fit-codebook");
    echo_config(out_path.string() + ".config.json", resolved);
    std::cout << "codebook with " << pt_codebook_size(book.get()) << " centroids written to " << out << '\n';
    return kExitOk;
}

int progress_printer(long step, double loss, void* user)
{
    const long total = *static_cast<long*>(user);
    if (step == 1 || step % 50 == 0 || step == total)
        std::fprintf(stderr, "step %ld/%ld loss %.6f\n", step, total, loss);
    return 1;
}

int run_train(const std::string& config, const std::string& manifest, const std::string& codebook_path,
              const std::string& out, const std::string& resume, const std::optional<long>& steps,
              const std::optional<std::uint64_t>& seed, const std::optional<int>& epochs,
              const std::optional<std::size_t>& batch, const std::optional<double>& lr)
{
    pt_codebook* raw_book = nullptr;
    check(pt_codebook_load(codebook_path.c_str(), &raw_book), "codebook");
    CodebookPtr book(raw_book);

    ConfigBuilder cb;
    cb.load(config);
    cb.set("train", "max_steps", steps);
    cb.set("train", "seed", seed);
    cb.set("train", "epochs", epochs);
    cb.set("train", "batch_size", batch);
    cb.set("train", "learning_rate", lr);
    cb.set_json(nlohmann::json::json_pointer("/train/codebook_path"), codebook_path);
    const nlohmann::json::json_pointer cb_size("/train/model/codebook_size");
    if (!cb.contains(cb_size))
        cb.set_json(cb_size, pt_codebook_size(book.get()));
    const auto resolved = cb.resolve();

    ensure_dir(out);
    echo_config(fs::path(out) / "config.json", resolved);
    pt_trainer* raw = nullptr;
    check(pt_trainer_create(resolved.c_str(), manifest.c_str(), book.get(), &raw), "train");
    TrainerPtr trainer(raw);
    if (!resume.empty())
        check(pt_trainer_resume(trainer.get(), resume.c_str()), "resume");
    long total = pt_trainer_total_steps(trainer.get());
    std::fprintf(stderr, "training from step %ld to %ld\n", pt_trainer_current_step(trainer.get()), total);
    check(pt_trainer_run(trainer.get(), out.c_str(), progress_printer, &total), "train");
    std::cout << "finished at step " << pt_trainer_current_step(trainer.get()) << "; checkpoint "
              << (fs::path(out) / "checkpoint.tpdm").string() << '\n';
    return kExitOk;
}

int run_convert(const std::string& config, const std::string& input, const std::string& checkpoint,
                const std::string& codebook_path, const std::string& output, const std::optional<int>& steps,
                const std::optional<std::uint64_t>& seed, const std::optional<double>& eta,
                const std::optional<std::size_t>& overlap)
{
    ConfigBuilder cb;
    cb.load(config);
    cb.set("convert", "steps", steps);
    cb.set("convert", "seed", seed);
    cb.set("convert", "eta", eta);
    cb.set("convert", "overlap", overlap);
    const auto resolved = cb.resolve();

    pt_model* raw_model = nullptr;
    check(pt_model_load(checkpoint.c_str(), &raw_model), "checkpoint");
    ModelPtr model(raw_model);
    pt_codebook* raw_book = nullptr;
    check(pt_codebook_load(codebook_path.c_str(), &raw_book), "codebook");
    CodebookPtr book(raw_book);
    pt_clip* raw_in = nullptr;
    check(pt_clip_read(input.c_str(), &raw_in), "input");
    ClipPtr in(raw_in);

    pt_clip* raw_out = nullptr;
    check(pt_model_convert(model.get(), book.get(), in.get(), resolved.c_str(), &raw_out), "convert");
    ClipPtr converted(raw_out);
    const fs::path out_path(output);
    if (out_path.has_parent_path())
        ensure_dir(out_path.parent_path());
    size_t clipped = 0;
    check(pt_clip_write(converted.get(), output.c_str(), 0, &clipped), "output");
    echo_config(out_path.string() + ".config.json", resolved);
    if (clipped > 0)
        std::fprintf(stderr, "warning: %zu samples clipped to full scale\n", clipped);
    std::cout << "wrote " << pt_clip_length(converted.get()) << " samples at " << pt_clip_sample_rate(converted.get())
              << " Hz to " << output << '\n';
    return kExitOk;
}

int run_evaluate(const std::string& config, const std::string& source, const std::string& converted,
                 const std::string& out, const std::string& checkpoint_id)
{
    ConfigBuilder cb;
    cb.load(config);
    const auto resolved = cb.resolve();
    pt_clip* raw_a = nullptr;
    check(pt_clip_read(source.c_str(), &raw_a), "source");
    ClipPtr a(raw_a);
    pt_clip* raw_b = nullptr;
    check(pt_clip_read(converted.c_str(), &raw_b), "converted");
    ClipPtr b(raw_b);
    ensure_dir(out);
    pt_eval_summary summary{};
    check(pt_evaluate(a.get(), b.get(), resolved.c_str(), out.c_str(), source.c_str(), converted.c_str(),
                      checkpoint_id.c_str(), &summary),
          "evaluate");
    echo_config(fs::path(out) / "config.json", resolved);
    std::printf("pitch_accuracy %.4f\nmean_abs_difference_lu %.4f\nmax_abs_difference_lu %.4f\nwindows %zu\n",
                summary.pitch_accuracy, summary.mean_abs_difference_lu, summary.max_abs_difference_lu,
                summary.windows);
    return kExitOk;
}

void log_to_stderr(pt_log_level level, const char* message, void*)
{
    static const char* names[] = {"info", "warning", "error"};
    std::fprintf(stderr, "[%s] %s\n", names[level], message);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Piano-timbre conversion: synthetic corpora, codebook fitting, training, conversion, evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pt_version()));

    std::string config;

    auto* synth = app.add_subcommand("synth-data", "Generate a synthetic corpus and its manifest");
    std::string synth_out;
    std::optional<int> synth_clips, synth_rate;
    std::optional<double> synth_seconds;
    std::optional<std::string> synth_preset;
    std::optional<std::uint64_t> synth_seed;
    bool synth_octave = false;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--clips", synth_clips, "Number of clips")->check(CLI::PositiveNumber);
    synth->add_option("--seconds", synth_seconds, "Clip duration in seconds")->check(CLI::PositiveNumber);
    synth->add_option("--preset", synth_preset, "Timbre preset")->check(CLI::IsMember({"piano", "violin", "flute"}));
    synth->add_option("--seed", synth_seed, "Base seed; clip i uses seed + i");
    synth->add_option("--sample-rate", synth_rate, "Sample rate in Hz")->check(CLI::PositiveNumber);
    synth->add_flag("--octave-down", synth_octave, "Render every note one octave lower");
    synth->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);

    auto* fit = app.add_subcommand("fit-codebook", "Fit the loudness codebook on a corpus");
    std::string fit_manifest, fit_out;
    std::optional<int> fit_k;
    std::optional<std::size_t> fit_segment;
    fit->add_option("--manifest", fit_manifest, "Corpus manifest.json")->required();
    fit->add_option("--k", fit_k, "Codebook size")->check(CLI::PositiveNumber);
    fit->add_option("--out", fit_out, "Codebook JSON to write")->required();
    fit->add_option("--segment-length", fit_segment, "Samples per segment")->check(CLI::PositiveNumber);
    fit->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);

    auto* train = app.add_subcommand("train", "Train the diffusion decoder");
    std::string train_manifest, train_codebook, train_out, train_resume;
    std::optional<long> train_steps;
    std::optional<std::uint64_t> train_seed;
    std::optional<int> train_epochs;
    std::optional<std::size_t> train_batch;
    std::optional<double> train_lr;
    train->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
    train->add_option("--manifest", train_manifest, "Corpus manifest.json")->required();
    train->add_option("--codebook", train_codebook, "Loudness codebook JSON")->required();
    train->add_option("--out", train_out, "Output directory for checkpoints and loss.csv")->required();
    train->add_option("--resume", train_resume, "Checkpoint to continue from");
    train->add_option("--steps", train_steps, "Stop after this many optimizer steps in total")
        ->check(CLI::PositiveNumber);
    train->add_option("--seed", train_seed, "Training seed");
    train->add_option("--epochs", train_epochs, "Epoch count")->check(CLI::NonNegativeNumber);
    train->add_option("--batch-size", train_batch, "Batch size")->check(CLI::PositiveNumber);
    train->add_option("--lr", train_lr, "Adam learning rate")->check(CLI::PositiveNumber);

    auto* convert = app.add_subcommand("convert", "Convert a WAV file to piano timbre");
    std::string conv_input, conv_ckpt, conv_codebook, conv_output;
    std::optional<int> conv_steps;
    std::optional<std::uint64_t> conv_seed;
    std::optional<double> conv_eta;
    std::optional<std::size_t> conv_overlap;
    convert->add_option("--input", conv_input, "Input WAV")->required()->check(CLI::ExistingFile);
    convert->add_option("--checkpoint", conv_ckpt, "Trained checkpoint")->required();
    convert->add_option("--codebook", conv_codebook, "Loudness codebook JSON")->required();
    convert->add_option("--output", conv_output, "Output WAV")->required();
    convert->add_option("--steps", conv_steps, "Sampler steps")->check(CLI::PositiveNumber);
    convert->add_option("--seed", conv_seed, "Sampler seed");
    convert->add_option("--eta", conv_eta, "Ancestral noise scale; 0 is deterministic DDIM")
        ->check(CLI::NonNegativeNumber);
    convert->add_option("--overlap", conv_overlap, "Samples of linear cross-fade between chunks");
    convert->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);

    auto* evaluate = app.add_subcommand("evaluate", "Compare a converted file with its source");
    std::string eval_source, eval_converted, eval_out, eval_ckpt;
    evaluate->add_option("--source", eval_source, "Source WAV")->required();
    evaluate->add_option("--converted", eval_converted, "Converted WAV")->required();
    evaluate->add_option("--out", eval_out, "Report directory")->required();
    evaluate->add_option("--checkpoint-id", eval_ckpt, "Recorded in the report metadata");
    evaluate->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    pt_set_log_callback(log_to_stderr, nullptr);
    try {
        if (*synth)
            return run_synth(config, synth_out, synth_clips, synth_seconds, synth_preset, synth_seed, synth_rate,
                             synth_octave);
        if (*fit)
            return run_fit_codebook(config, fit_manifest, fit_out, fit_k, fit_segment);
        if (*train)
            return run_train(config, train_manifest, train_codebook, train_out, train_resume, train_steps, train_seed,
                             train_epochs, train_batch, train_lr);
        if (*convert)
            return run_convert(config, conv_input, conv_ckpt, conv_codebook, conv_output, conv_steps, conv_seed,
                               conv_eta, conv_overlap);
        if (*evaluate)
            return run_evaluate(config, eval_source, eval_converted, eval_out, eval_ckpt);
    } catch (const RuntimeFailure& f) {
        std::fprintf(stderr, "error: %s\n", f.message.c_str());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
