#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pt {

inline constexpr int kCodebookSchemaVersion = 1;

enum class CodebookInit {
    Quantile, // centroid j starts at the (j + 0.5)/K quantile
    Optimal,  // starts from the exact optimal 1-D partition (dynamic programming)
};

struct CodebookFitMetadata {
    std::size_t sample_count = 0;
    int iterations = 0;
    std::uint64_t seed = 0;
    CodebookInit init = CodebookInit::Optimal;
};

/// Scalar loudness codebook; centroids strictly ascending.
struct Codebook {
    std::vector<double> centroids;
    CodebookFitMetadata metadata;

    std::size_t size() const noexcept { return centroids.size(); }
    bool empty() const noexcept { return centroids.empty(); }

    bool operator==(const Codebook& other) const { return centroids == other.centroids; }
};

struct CodebookFitOptions {
    int max_iters = 100;
    double tol = 1e-6;
    std::uint64_t seed = 0; // recorded only; fitting is deterministic
    CodebookInit init = CodebookInit::Optimal;
};

/// Lloyd's algorithm in one dimension. Needs at least k distinct values.
Codebook fit_codebook(std::span<const double> values, int k, const CodebookFitOptions& opts = {});

/// Nearest centroid, ties to the lower index.
int encode(double value, const Codebook& codebook);
double decode(int index, const Codebook& codebook);

/// Sum of squared distances from each value to its nearest centroid.
double quantization_cost(std::span<const double> values, const Codebook& codebook);

std::string codebook_to_json(const Codebook& codebook);
Codebook codebook_from_json(const std::string& text);

void save_codebook(const Codebook& codebook, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

} // namespace pt
