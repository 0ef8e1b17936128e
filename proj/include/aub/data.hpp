#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "aub/matrix.hpp"
#include "aub/rng.hpp"

namespace aub {

/// Per-domain train/val/test sample matrices with provenance metadata.
/// Splits share one width and partition the generated rows.
struct DomainDataset {
    std::string name;
    Matrix train, val, test;
    std::size_t dim = 0;
    std::string provenance;

    std::size_t total_rows() const { return train.rows() + val.rows() + test.rows(); }
};

struct SplitSpec {
    std::vector<std::size_t> feature_indices;  // columns used for median splitting
    bool standardize = true;
    std::uint64_t seed = 0;
};

/// Shuffles rows and splits them 80/10/10: floor(0.8 N) train, floor(0.1 N)
/// val, remainder test.
std::array<Matrix, 3> split_80_10_10(const Matrix& all, SeededRng& rng);

/// Two interleaved half-circles, unit radius, the second one mirrored and
/// offset by (1, 0.5), with isotropic Gaussian noise. n points per domain.
std::vector<DomainDataset> gen_two_moons(std::size_t n, double noise_sd,
                                         std::uint64_t seed);

/// Two domains, each its own random mixture of `n_components` isotropic 2-D
/// Gaussians with centers uniform in [-box, box]^2 and the given sd.
std::vector<DomainDataset> gen_blobs(std::size_t n, std::size_t n_components,
                                     double box, double component_sd,
                                     std::uint64_t seed);

/// One 1-D Gaussian domain per (mean, sd) pair; n points per domain.
std::vector<DomainDataset> gen_gaussians_1d(std::size_t n, std::vector<double> means,
                                            std::vector<double> sds, std::uint64_t seed);

/// Synthetic tabular stand-in: n rows from a random mixture of `n_components`
/// correlated Gaussians in `dim` columns, plus independent tail columns that
/// make good median-split features.
Matrix gen_mixture_matrix(std::size_t n, std::size_t dim, std::size_t n_components,
                          std::uint64_t seed);

/// Strict CSV reader: no quoted fields, '.' decimals, '\n' or '\r\n' endings.
/// Ragged rows and non-numeric cells are reported with their position.
Matrix load_csv(const std::string& path, bool has_header,
                std::vector<std::string>* header = nullptr);

void save_csv(const std::filesystem::path& path, const Matrix& m);

/// Routes rows into 2^m domains by the sign of (value - median) for each of
/// the m split features (computed on the whole matrix), drops the split
/// columns, splits each domain 80/10/10, and optionally z-scores the retained
/// features using pooled train statistics. Rows tied at a median alternate
/// sides with a per-feature stagger so simultaneous ties spread over all
/// sign patterns.
std::vector<DomainDataset> median_split(const Matrix& m, const SplitSpec& spec);

/// Bundle directory layout: <dir>/manifest.json plus one subdirectory per
/// domain holding train.csv / val.csv / test.csv and its own manifest.
void save_bundle(const std::filesystem::path& dir,
                 const std::vector<DomainDataset>& domains, std::uint64_t seed);

std::vector<DomainDataset> load_bundle(const std::filesystem::path& dir);

nlohmann::json bundle_manifest(const std::filesystem::path& dir);

}  // namespace aub
