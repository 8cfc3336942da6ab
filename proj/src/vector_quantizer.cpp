#include "pianotimbre/vector_quantizer.hpp"

#include "pianotimbre/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace pt {

namespace {

// Prefix sums over sorted values so any contiguous run's SSE is O(1).
struct RunCost {
    std::vector<double> sum, sum_sq;

    explicit RunCost(const std::vector<double>& sorted) : sum(sorted.size() + 1, 0.0), sum_sq(sorted.size() + 1, 0.0)
    {
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            sum[i + 1] = sum[i] + sorted[i];
            sum_sq[i + 1] = sum_sq[i] + sorted[i] * sorted[i];
        }
    }

    // SSE of values [i, j).
    double operator()(std::size_t i, std::size_t j) const
    {
        const double n = static_cast<double>(j - i);
        const double s = sum[j] - sum[i];
        return std::max(0.0, (sum_sq[j] - sum_sq[i]) - s * s / n);
    }

    double mean(std::size_t i, std::size_t j) const { return (sum[j] - sum[i]) / static_cast<double>(j - i); }
};

// Optimal contiguous k-partition of sorted data. The SSE cost satisfies the
// quadrangle inequality, so the split points are monotone and each DP layer
// can be filled by divide and conquer.
std::vector<double> optimal_partition_means(const std::vector<double>& sorted, int k)
{
    const std::size_t n = sorted.size();
    const RunCost cost(sorted);
    constexpr double inf = std::numeric_limits<double>::infinity();

    // best[m][j]: cost of splitting the first j values into m+1 runs.
    std::vector<std::vector<double>> best(static_cast<std::size_t>(k), std::vector<double>(n + 1, inf));
    std::vector<std::vector<std::size_t>> split(static_cast<std::size_t>(k), std::vector<std::size_t>(n + 1, 0));
    for (std::size_t j = 1; j <= n; ++j)
        best[0][j] = cost(0, j);

    for (std::size_t m = 1; m < static_cast<std::size_t>(k); ++m) {
        const auto& prev = best[m - 1];
        auto& cur = best[m];
        auto& arg = split[m];
        auto solve = [&](auto&& self, std::size_t lo, std::size_t hi, std::size_t opt_lo, std::size_t opt_hi) -> void {
            if (lo > hi)
                return;
            const std::size_t mid = lo + (hi - lo) / 2;
            double best_val = inf;
            std::size_t best_i = opt_lo;
            const std::size_t upper = std::min(opt_hi, mid - 1);
            for (std::size_t i = std::max<std::size_t>(opt_lo, m); i <= upper; ++i) {
                const double v = prev[i] + cost(i, mid);
                if (v < best_val) {
                    best_val = v;
                    best_i = i;
                }
            }
            cur[mid] = best_val;
            arg[mid] = best_i;
            if (mid > lo)
                self(self, lo, mid - 1, opt_lo, best_i);
            self(self, mid + 1, hi, best_i, opt_hi);
        };
        solve(solve, m + 1, n, m, n - 1);
    }

    std::vector<double> means(static_cast<std::size_t>(k));
    std::size_t end = n;
    for (std::size_t m = static_cast<std::size_t>(k); m-- > 0;) {
        const std::size_t begin = m == 0 ? 0 : split[m][end];
        means[m] = cost.mean(begin, end);
        end = begin;
    }
    return means;
}

int nearest(double value, const std::vector<double>& centroids)
{
    int best = 0;
    double best_d = std::abs(value - centroids[0]);
    for (std::size_t j = 1; j < centroids.size(); ++j) {
        const double d = std::abs(value - centroids[j]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

const char* init_name(CodebookInit init) { return init == CodebookInit::Quantile ? "quantile" : "optimal"; }

} // namespace

Codebook fit_codebook(std::span<const double> values, int k, const CodebookFitOptions& opts)
{
    require(k >= 1, ErrorCode::InvalidArgument, "codebook size must be >= 1");
    for (double v : values)
        require(std::isfinite(v), ErrorCode::InvalidArgument, "non-finite loudness value");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    std::size_t n_distinct = sorted.empty() ? 0 : 1;
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i] != sorted[i - 1])
            ++n_distinct;
    require(n_distinct >= static_cast<std::size_t>(k), ErrorCode::InsufficientDistinctValues,
            "need at least " + std::to_string(k) + " distinct values, have " + std::to_string(n_distinct));

    const std::size_t n = sorted.size();
    std::vector<double> centroids(static_cast<std::size_t>(k));
    if (opts.init == CodebookInit::Quantile) {
        for (int j = 0; j < k; ++j) {
            const auto pos = static_cast<std::size_t>(std::floor((j + 0.5) * static_cast<double>(n) / k));
            centroids[static_cast<std::size_t>(j)] = sorted[std::min(pos, n - 1)];
        }
    } else {
        centroids = optimal_partition_means(sorted, k);
    }

    std::vector<int> assign(n);
    std::vector<double> sums(static_cast<std::size_t>(k));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k));
    int iterations = 0;
    for (int iter = 0; iter < opts.max_iters; ++iter) {
        iterations = iter + 1;
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            assign[i] = nearest(sorted[i], centroids);
            sums[static_cast<std::size_t>(assign[i])] += sorted[i];
            ++counts[static_cast<std::size_t>(assign[i])];
        }

        std::vector<double> next(centroids.size());
        std::vector<bool> taken(n, false);
        for (std::size_t j = 0; j < next.size(); ++j) {
            if (counts[j] > 0) {
                next[j] = sums[j] / static_cast<double>(counts[j]);
                continue;
            }
            // Empty cluster: re-seed at the value farthest from its current centroid.
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = std::abs(sorted[i] - centroids[static_cast<std::size_t>(assign[i])]);
                if (!taken[i] && d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            taken[far] = true;
            next[j] = sorted[far];
        }

        double movement = 0.0;
        for (std::size_t j = 0; j < next.size(); ++j)
            movement = std::max(movement, std::abs(next[j] - centroids[j]));
        centroids = std::move(next);
        if (movement < opts.tol)
            break;
    }

    std::sort(centroids.begin(), centroids.end());
    centroids.erase(std::unique(centroids.begin(), centroids.end()), centroids.end());

    Codebook cb;
    cb.centroids = std::move(centroids);
    cb.metadata.sample_count = n;
    cb.metadata.iterations = iterations;
    cb.metadata.seed = opts.seed;
    cb.metadata.init = opts.init;
    return cb;
}

int encode(double value, const Codebook& codebook)
{
    require(!codebook.empty(), ErrorCode::EmptyCodebook, "encode against an empty codebook");
    return nearest(value, codebook.centroids);
}

double decode(int index, const Codebook& codebook)
{
    require(index >= 0 && static_cast<std::size_t>(index) < codebook.size(), ErrorCode::IndexOutOfRange,
            "codebook index " + std::to_string(index) + " outside [0, " + std::to_string(codebook.size()) + ")");
    return codebook.centroids[static_cast<std::size_t>(index)];
}

double quantization_cost(std::span<const double> values, const Codebook& codebook)
{
    double total = 0.0;
    for (double v : values) {
        const double d = v - codebook.centroids[static_cast<std::size_t>(encode(v, codebook))];
        total += d * d;
    }
    return total;
}

std::string codebook_to_json(const Codebook& codebook)
{
    nlohmann::json j;
    j["version"] = kCodebookSchemaVersion;
    j["k"] = codebook.size();
    j["centroids"] = codebook.centroids;
    j["metadata"] = {{"sample_count", codebook.metadata.sample_count},
                     {"iterations", codebook.metadata.iterations},
                     {"seed", codebook.metadata.seed},
                     {"init", init_name(codebook.metadata.init)}};
    return j.dump(2) + "\n";
}

Codebook codebook_from_json(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::MalformedHeader, std::string("codebook is not valid JSON: ") + e.what());
    }
    require(j.is_object() && j.contains("version") && j["version"].is_number_integer(),
            ErrorCode::SchemaVersionMismatch, "codebook has no integer version field");
    const int version = j["version"].get<int>();
    require(version == kCodebookSchemaVersion, ErrorCode::SchemaVersionMismatch,
            "codebook version " + std::to_string(version) + " (expected " +
                std::to_string(kCodebookSchemaVersion) + ")");
    require(j.contains("centroids") && j["centroids"].is_array(), ErrorCode::MalformedHeader,
            "codebook has no centroid list");

    Codebook cb;
    for (const auto& v : j["centroids"]) {
        require(v.is_number(), ErrorCode::MalformedHeader, "non-numeric centroid");
        cb.centroids.push_back(v.get<double>());
    }
    require(!cb.centroids.empty(), ErrorCode::EmptyCodebook, "codebook file lists no centroids");
    for (std::size_t i = 1; i < cb.centroids.size(); ++i)
        require(cb.centroids[i - 1] < cb.centroids[i], ErrorCode::MalformedHeader,
                "centroids must be strictly ascending");
    if (j.contains("k"))
        require(j["k"].get<std::size_t>() == cb.centroids.size(), ErrorCode::MalformedHeader,
                "k does not match the centroid count");
    if (j.contains("metadata") && j["metadata"].is_object()) {
        const auto& m = j["metadata"];
        cb.metadata.sample_count = m.value("sample_count", std::size_t{0});
        cb.metadata.iterations = m.value("iterations", 0);
        cb.metadata.seed = m.value("seed", std::uint64_t{0});
        cb.metadata.init = m.value("init", std::string("optimal")) == "quantile" ? CodebookInit::Quantile
                                                                                  : CodebookInit::Optimal;
    }
    return cb;
}

void save_codebook(const Codebook& codebook, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        fail(ErrorCode::IoFailure, "cannot write codebook to " + path.string());
    out << codebook_to_json(codebook);
    if (!out)
        fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

Codebook load_codebook(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        fail(ErrorCode::IoFailure, "cannot read codebook " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return codebook_from_json(ss.str());
}

} // namespace pt
