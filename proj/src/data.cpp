#include "aub/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace aub {

namespace {
constexpr double kPi = 3.141592653589793238462643383279;

std::vector<std::size_t> shuffled_indices(std::size_t n, SeededRng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    return idx;
}
}  // namespace

std::array<Matrix, 3> split_80_10_10(const Matrix& all, SeededRng& rng) {
    const std::size_t n = all.rows();
    require(n >= 3, "need at least 3 rows to split, got ", n);
    auto idx = shuffled_indices(n, rng);
    const std::size_t n_train = (n * 8) / 10;
    const std::size_t n_val = n / 10;
    std::span<const std::size_t> s(idx);
    return {all.take_rows(s.subspan(0, n_train)),
            all.take_rows(s.subspan(n_train, n_val)),
            all.take_rows(s.subspan(n_train + n_val))};
}

std::vector<DomainDataset> gen_two_moons(std::size_t n, double noise_sd,
                                         std::uint64_t seed) {
    require(n >= 10, "gen_two_moons needs n >= 10");
    require(noise_sd >= 0.0, "noise sd must be non-negative");
    SeededRng rng(seed);
    Matrix upper(n, 2), lower(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
        const double t = rng.uniform() * kPi;
        upper(r, 0) = std::cos(t) + noise_sd * rng.normal();
        upper(r, 1) = std::sin(t) + noise_sd * rng.normal();
    }
    for (std::size_t r = 0; r < n; ++r) {
        const double t = rng.uniform() * kPi;
        lower(r, 0) = 1.0 - std::cos(t) + noise_sd * rng.normal();
        lower(r, 1) = 0.5 - std::sin(t) + noise_sd * rng.normal();
    }
    std::ostringstream prov;
    prov << "two_moons(n=" << n << ", noise_sd=" << noise_sd << ", seed=" << seed << ")";
    std::vector<DomainDataset> out(2);
    auto up = split_80_10_10(upper, rng);
    out[0] = {"moon_upper", std::move(up[0]), std::move(up[1]), std::move(up[2]), 2,
              prov.str()};
    auto lo = split_80_10_10(lower, rng);
    out[1] = {"moon_lower", std::move(lo[0]), std::move(lo[1]), std::move(lo[2]), 2,
              prov.str()};
    return out;
}

std::vector<DomainDataset> gen_blobs(std::size_t n, std::size_t n_components,
                                     double box, double component_sd,
                                     std::uint64_t seed) {
    require(n >= 10, "gen_blobs needs n >= 10");
    require(n_components >= 1, "gen_blobs needs at least one component");
    require(box > 0.0 && component_sd >= 0.0, "invalid blob geometry");
    SeededRng rng(seed);
    std::ostringstream prov;
    prov << "blobs(n=" << n << ", components=" << n_components << ", box=" << box
         << ", sd=" << component_sd << ", seed=" << seed << ")";
    std::vector<DomainDataset> out;
    for (int d = 0; d < 2; ++d) {
        Matrix centers(n_components, 2);
        for (std::size_t k = 0; k < n_components; ++k) {
            centers(k, 0) = rng.uniform_in(-box, box);
            centers(k, 1) = rng.uniform_in(-box, box);
        }
        Matrix pts(n, 2);
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t k = rng.index(n_components);
            pts(r, 0) = centers(k, 0) + component_sd * rng.normal();
            pts(r, 1) = centers(k, 1) + component_sd * rng.normal();
        }
        auto splits = split_80_10_10(pts, rng);
        out.push_back({"blobs_" + std::to_string(d), std::move(splits[0]),
                       std::move(splits[1]), std::move(splits[2]), 2, prov.str()});
    }
    return out;
}

std::vector<DomainDataset> gen_gaussians_1d(std::size_t n, std::vector<double> means,
                                            std::vector<double> sds, std::uint64_t seed) {
    require(n >= 10, "gen_gaussians_1d needs n >= 10");
    require(!means.empty() && means.size() == sds.size(), "means/sds mismatch");
    SeededRng rng(seed);
    std::vector<DomainDataset> out;
    for (std::size_t j = 0; j < means.size(); ++j) {
        require(sds[j] > 0.0, "gaussian sd must be positive");
        Matrix pts(n, 1);
        for (std::size_t r = 0; r < n; ++r) pts(r, 0) = means[j] + sds[j] * rng.normal();
        auto splits = split_80_10_10(pts, rng);
        std::ostringstream prov;
        prov << "gaussian_1d(mean=" << means[j] << ", sd=" << sds[j] << ", n=" << n
             << ", seed=" << seed << ")";
        out.push_back({"gauss_" + std::to_string(j), std::move(splits[0]),
                       std::move(splits[1]), std::move(splits[2]), 1, prov.str()});
    }
    return out;
}

Matrix gen_mixture_matrix(std::size_t n, std::size_t dim, std::size_t n_components,
                          std::uint64_t seed) {
    require(n >= 10 && dim >= 2 && n_components >= 1, "invalid mixture matrix shape");
    SeededRng rng(seed);
    // Random component means and mixing matrices over the leading columns; the
    // trailing two columns stay nearly independent so median splits on them
    // produce balanced domains.
    const std::size_t d_core = dim;
    std::vector<Matrix> mixers;
    Matrix means(n_components, d_core);
    for (std::size_t k = 0; k < n_components; ++k) {
        for (std::size_t c = 0; c < d_core; ++c) means(k, c) = rng.uniform_in(-3.0, 3.0);
        Matrix a(d_core, d_core);
        for (std::size_t i = 0; i < d_core; ++i) {
            for (std::size_t j = 0; j < d_core; ++j) {
                a(i, j) = (i == j ? 0.6 : 0.0) +
                          0.35 * rng.normal() / std::sqrt(static_cast<double>(d_core));
            }
        }
        mixers.push_back(std::move(a));
    }
    Matrix out(n, dim);
    std::vector<double> eps(d_core);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t k = rng.index(n_components);
        for (double& e : eps) e = rng.normal();
        const Matrix& a = mixers[k];
        for (std::size_t c = 0; c < d_core; ++c) {
            double v = means(k, c);
            for (std::size_t j = 0; j < d_core; ++j) v += a(c, j) * eps[j];
            out(r, c) = v;
        }
        // keep the last two columns dominated by their own noise
        for (std::size_t c = dim >= 2 ? dim - 2 : 0; c < dim; ++c) {
            out(r, c) = 0.25 * out(r, c) + rng.normal();
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV

Matrix load_csv(const std::string& path, bool has_header,
                std::vector<std::string>* header) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open csv file '", path, "'");
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> values;
    std::size_t cols = 0;
    std::size_t rows = 0;
    auto split_cells = [](const std::string& s, std::vector<std::string>& cells) {
        cells.clear();
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = s.find(',', start);
            if (comma == std::string::npos) {
                cells.push_back(s.substr(start));
                break;
            }
            cells.push_back(s.substr(start, comma - start));
            start = comma + 1;
        }
    };
    std::vector<std::string> cells;
    bool expecting_header = has_header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
        split_cells(line, cells);
        if (expecting_header) {
            if (header) *header = cells;
            cols = cells.size();
            expecting_header = false;
            continue;
        }
        if (cols == 0) {
            cols = cells.size();
        } else if (cells.size() != cols) {
            fail("ragged csv row at line ", line_no, " in '", path, "': expected ", cols,
                 " cells, got ", cells.size());
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string& cell = cells[c];
            double v = 0.0;
            const char* begin = cell.data();
            const char* end = begin + cell.size();
            while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
            while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
            auto [ptr, ec] = std::from_chars(begin, end, v);
            if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
                fail("non-numeric csv cell at row ", rows + 1, ", column ", c + 1,
                     " (line ", line_no, ") in '", path, "': '", cell, "'");
            }
            values.push_back(v);
        }
        ++rows;
    }
    require(rows > 0, "empty csv file '", path, "'");
    Matrix m(rows, cols);
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

void save_csv(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write csv file '", path.string(), "'");
    char buf[40];
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
            out << buf;
            out << (c + 1 == m.cols() ? '\n' : ',');
        }
    }
    require(out.good(), "write failed for '", path.string(), "'");
}

// ---------------------------------------------------------------------------
// median split

namespace {
double column_median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string pattern_label(std::size_t pattern, std::size_t m) {
    std::string s(m, '+');
    for (std::size_t f = 0; f < m; ++f) {
        if (pattern & (std::size_t{1} << f)) s[f] = '-';
    }
    return s;
}
}  // namespace

std::vector<DomainDataset> median_split(const Matrix& m, const SplitSpec& spec) {
    const std::size_t nf = spec.feature_indices.size();
    require(nf >= 1 && nf <= 4, "median_split supports 1..4 split features, got ", nf);
    const std::size_t n_domains = std::size_t{1} << nf;
    require(m.rows() >= n_domains * 10, "median_split needs at least ", n_domains * 10,
            " rows, got ", m.rows());
    for (std::size_t f : spec.feature_indices) {
        require(f < m.cols(), "split feature index ", f, " out of range");
    }
    for (std::size_t a = 0; a < nf; ++a) {
        for (std::size_t b = a + 1; b < nf; ++b) {
            require(spec.feature_indices[a] != spec.feature_indices[b],
                    "duplicate split feature index ", spec.feature_indices[a]);
        }
    }

    std::vector<double> medians(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        medians[f] = column_median(m.col(spec.feature_indices[f]));
    }

    // Route rows. Ties alternate sides; feature f flips every 2^f tied rows so
    // rows tied on every feature cycle through all 2^m patterns.
    std::vector<std::size_t> tie_counts(nf, 0);
    std::vector<std::vector<std::size_t>> domain_rows(n_domains);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        std::size_t pattern = 0;
        for (std::size_t f = 0; f < nf; ++f) {
            const double v = m(r, spec.feature_indices[f]);
            bool low;
            if (v > medians[f]) {
                low = false;
            } else if (v < medians[f]) {
                low = true;
            } else {
                low = (tie_counts[f] / (std::size_t{1} << f)) % 2 == 1;
                ++tie_counts[f];
            }
            if (low) pattern |= std::size_t{1} << f;
        }
        domain_rows[pattern].push_back(r);
    }

    // Retained columns: everything except the split features.
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < m.cols(); ++c) {
        if (std::find(spec.feature_indices.begin(), spec.feature_indices.end(), c) ==
            spec.feature_indices.end()) {
            keep.push_back(c);
        }
    }
    require(!keep.empty(), "median_split would drop every column");

    SeededRng rng(spec.seed);
    std::vector<DomainDataset> out(n_domains);
    for (std::size_t p = 0; p < n_domains; ++p) {
        require(domain_rows[p].size() >= 10, "domain (", pattern_label(p, nf),
                ") received only ", domain_rows[p].size(), " rows");
        Matrix sub(domain_rows[p].size(), keep.size());
        for (std::size_t i = 0; i < domain_rows[p].size(); ++i) {
            for (std::size_t c = 0; c < keep.size(); ++c) {
                sub(i, c) = m(domain_rows[p][i], keep[c]);
            }
        }
        auto splits = split_80_10_10(sub, rng);
        std::ostringstream prov;
        prov << "median_split(pattern=" << pattern_label(p, nf) << ", features=[";
        for (std::size_t f = 0; f < nf; ++f) {
            prov << (f ? "," : "") << spec.feature_indices[f];
        }
        prov << "], standardize=" << (spec.standardize ? "true" : "false")
             << ", seed=" << spec.seed << ")";
        out[p] = {"domain_" + pattern_label(p, nf), std::move(splits[0]),
                  std::move(splits[1]), std::move(splits[2]), keep.size(), prov.str()};
    }

    if (spec.standardize) {
        const std::size_t d = keep.size();
        std::vector<double> mean(d, 0.0), sq(d, 0.0);
        std::size_t n_train = 0;
        for (const auto& ds : out) {
            for (std::size_t r = 0; r < ds.train.rows(); ++r) {
                for (std::size_t c = 0; c < d; ++c) mean[c] += ds.train(r, c);
            }
            n_train += ds.train.rows();
        }
        for (double& v : mean) v /= static_cast<double>(n_train);
        for (const auto& ds : out) {
            for (std::size_t r = 0; r < ds.train.rows(); ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    const double dd = ds.train(r, c) - mean[c];
                    sq[c] += dd * dd;
                }
            }
        }
        std::vector<double> sd(d);
        for (std::size_t c = 0; c < d; ++c) {
            sd[c] = std::sqrt(sq[c] / static_cast<double>(n_train));
            require(sd[c] > 0.0, "cannot standardize constant column ", keep[c]);
        }
        auto apply = [&](Matrix& mm) {
            for (std::size_t r = 0; r < mm.rows(); ++r) {
                for (std::size_t c = 0; c < d; ++c) mm(r, c) = (mm(r, c) - mean[c]) / sd[c];
            }
        };
        for (auto& ds : out) {
            apply(ds.train);
            apply(ds.val);
            apply(ds.test);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// bundles

void save_bundle(const std::filesystem::path& dir,
                 const std::vector<DomainDataset>& domains, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["k"] = domains.size();
    manifest["dim"] = domains.empty() ? 0 : domains[0].dim;
    nlohmann::json list = nlohmann::json::array();
    for (const auto& ds : domains) {
        const fs::path sub = dir / ds.name;
        fs::create_directories(sub);
        save_csv(sub / "train.csv", ds.train);
        save_csv(sub / "val.csv", ds.val);
        save_csv(sub / "test.csv", ds.test);
        nlohmann::json dm = {{"name", ds.name},
                             {"dim", ds.dim},
                             {"provenance", ds.provenance},
                             {"seed", seed},
                             {"rows", {{"train", ds.train.rows()},
                                       {"val", ds.val.rows()},
                                       {"test", ds.test.rows()}}}};
        std::ofstream dm_out(sub / "manifest.json", std::ios::binary);
        dm_out << dm.dump(2) << '\n';
        list.push_back(dm);
    }
    manifest["domains"] = list;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    require(out.good(), "cannot write bundle manifest in '", dir.string(), "'");
    out << manifest.dump(2) << '\n';
}

nlohmann::json bundle_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json", std::ios::binary);
    require(in.good(), "no bundle manifest in '", dir.string(), "'");
    return nlohmann::json::parse(in);
}

std::vector<DomainDataset> load_bundle(const std::filesystem::path& dir) {
    const auto manifest = bundle_manifest(dir);
    std::vector<DomainDataset> out;
    for (const auto& dm : manifest.at("domains")) {
        DomainDataset ds;
        ds.name = dm.at("name").get<std::string>();
        ds.dim = dm.at("dim").get<std::size_t>();
        ds.provenance = dm.at("provenance").get<std::string>();
        const auto sub = dir / ds.name;
        ds.train = load_csv((sub / "train.csv").string(), false);
        ds.val = load_csv((sub / "val.csv").string(), false);
        ds.test = load_csv((sub / "test.csv").string(), false);
        require(ds.train.cols() == ds.dim && ds.val.cols() == ds.dim &&
                    ds.test.cols() == ds.dim,
                "bundle domain '", ds.name, "' width does not match its manifest");
        out.push_back(std::move(ds));
    }
    require(!out.empty(), "bundle '", dir.string(), "' has no domains");
    return out;
}

}  // namespace aub
