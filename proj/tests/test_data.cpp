#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "aub/data.hpp"

using namespace aub;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("aub_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

Matrix concat_rows(const DomainDataset& d) {
    Matrix all(d.total_rows(), d.dim);
    std::size_t r = 0;
    for (const Matrix* m : {&d.train, &d.val, &d.test}) {
        for (std::size_t i = 0; i < m->rows(); ++i, ++r) {
            for (std::size_t c = 0; c < d.dim; ++c) all(r, c) = (*m)(i, c);
        }
    }
    return all;
}
}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("noiseless moons sit on their unit circles") {
    auto domains = gen_two_moons(200, 0.0, 42);
    REQUIRE(domains.size() == 2);
    const Matrix upper = concat_rows(domains[0]);
    for (std::size_t r = 0; r < upper.rows(); ++r) {
        const double rad = upper(r, 0) * upper(r, 0) + upper(r, 1) * upper(r, 1);
        CHECK(std::abs(rad - 1.0) <= 1e-12);
        CHECK(upper(r, 1) >= 0.0);
    }
    const Matrix lower = concat_rows(domains[1]);
    for (std::size_t r = 0; r < lower.rows(); ++r) {
        const double dx = lower(r, 0) - 1.0;
        const double dy = lower(r, 1) - 0.5;
        CHECK(std::abs(dx * dx + dy * dy - 1.0) <= 1e-12);
        CHECK(lower(r, 1) <= 0.5);
    }
}

TEST_CASE("moon sample means match the arc centroid integrals") {
    // centroid of the upper arc under uniform angle: trapezoid over t
    const std::size_t nq = 20001;
    double cx = 0.0, cy = 0.0;
    const double pi = 3.141592653589793238462643383279;
    for (std::size_t i = 0; i < nq; ++i) {
        const double t = pi * static_cast<double>(i) / static_cast<double>(nq - 1);
        const double w = (i == 0 || i + 1 == nq) ? 0.5 : 1.0;
        cx += w * std::cos(t);
        cy += w * std::sin(t);
    }
    cx /= static_cast<double>(nq - 1);
    cy /= static_cast<double>(nq - 1);

    auto domains = gen_two_moons(1000, 0.05, 7);
    const Matrix upper = concat_rows(domains[0]);
    double mx = 0.0, my = 0.0;
    for (std::size_t r = 0; r < upper.rows(); ++r) {
        mx += upper(r, 0);
        my += upper(r, 1);
    }
    mx /= upper.rows();
    my /= upper.rows();
    CHECK(std::abs(mx - cx) < 0.05);
    CHECK(std::abs(my - cy) < 0.05);
}

TEST_CASE("generators are pure functions of their arguments") {
    auto a = gen_two_moons(100, 0.05, 9);
    auto b = gen_two_moons(100, 0.05, 9);
    CHECK(a[0].train == b[0].train);
    CHECK(a[1].test == b[1].test);

    auto c = gen_blobs(100, 3, 3.0, 0.5, 4);
    auto d = gen_blobs(100, 3, 3.0, 0.5, 4);
    CHECK(c[0].train == d[0].train);
    CHECK(c[1].val == d[1].val);
}

TEST_CASE("degenerate blobs collapse onto their centers") {
    auto domains = gen_blobs(50, 1, 2.0, 0.0, 11);
    const Matrix pts = concat_rows(domains[0]);
    for (std::size_t r = 1; r < pts.rows(); ++r) {
        CHECK(pts(r, 0) == pts(0, 0));
        CHECK(pts(r, 1) == pts(0, 1));
    }
}

TEST_CASE("blob component occupancy stays within multinomial bounds") {
    const std::size_t n = 4000, k = 4;
    auto domains = gen_blobs(n, k, 5.0, 0.02, 123);
    const Matrix pts = concat_rows(domains[0]);
    // recover centers by rounding: sd is tiny, so cluster points coincide
    std::set<std::pair<long, long>> centers;
    std::vector<std::size_t> counts;
    std::vector<std::pair<double, double>> reps;
    for (std::size_t r = 0; r < pts.rows(); ++r) {
        bool found = false;
        for (std::size_t c = 0; c < reps.size(); ++c) {
            const double dx = pts(r, 0) - reps[c].first;
            const double dy = pts(r, 1) - reps[c].second;
            if (dx * dx + dy * dy < 0.25) {
                counts[c] += 1;
                found = true;
                break;
            }
        }
        if (!found) {
            reps.push_back({pts(r, 0), pts(r, 1)});
            counts.push_back(1);
        }
    }
    REQUIRE(counts.size() == k);
    const double expected = static_cast<double>(n) / k;
    const double sigma = std::sqrt(static_cast<double>(n) * (1.0 / k) * (1.0 - 1.0 / k));
    for (std::size_t c = 0; c < k; ++c) {
        CHECK(std::abs(static_cast<double>(counts[c]) - expected) <= 3.0 * sigma);
    }
}

TEST_CASE("csv loading handles plain and headered files") {
    auto dir = temp_dir("csv");
    {
        std::ofstream out(dir / "plain.csv");
        out << "1,2\n3,4\n";
    }
    Matrix m = load_csv((dir / "plain.csv").string(), false);
    CHECK(m == Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}}));

    {
        std::ofstream out(dir / "headered.csv");
        out << "a,b\r\n1,2\r\n3,4\r\n";
    }
    std::vector<std::string> header;
    Matrix h = load_csv((dir / "headered.csv").string(), true, &header);
    CHECK(h == m);
    CHECK(header == std::vector<std::string>{"a", "b"});
}

TEST_CASE("csv errors carry positions") {
    auto dir = temp_dir("csv_err");
    {
        std::ofstream out(dir / "ragged.csv");
        out << "1,2\n3\n";
    }
    CHECK_THROWS_WITH_AS(load_csv((dir / "ragged.csv").string(), false),
                         doctest::Contains("line 2"), Error);
    {
        std::ofstream out(dir / "alpha.csv");
        out << "1,2\n3,x\n";
    }
    CHECK_THROWS_WITH_AS(load_csv((dir / "alpha.csv").string(), false),
                         doctest::Contains("column 2"), Error);
    {
        std::ofstream out(dir / "empty.csv");
    }
    CHECK_THROWS_AS(load_csv((dir / "empty.csv").string(), false), Error);
    CHECK_THROWS_AS(load_csv((dir / "missing.csv").string(), false), Error);
}

TEST_CASE("csv round trips through save_csv") {
    auto dir = temp_dir("csv_rt");
    Matrix m = Matrix::from_rows({{0.1, -2.5e-7}, {3.14159265358979, 1e300}});
    save_csv(dir / "m.csv", m);
    CHECK(load_csv((dir / "m.csv").string(), false) == m);
}

TEST_CASE("a single-feature median split halves 1..100") {
    Matrix m(100, 2);
    for (std::size_t r = 0; r < 100; ++r) {
        m(r, 0) = static_cast<double>(r);        // retained feature
        m(r, 1) = static_cast<double>(r + 1);    // split feature: 1..100
    }
    SplitSpec spec;
    spec.feature_indices = {1};
    spec.standardize = false;
    auto domains = median_split(m, spec);
    REQUIRE(domains.size() == 2);
    CHECK(domains[0].total_rows() == 50);
    CHECK(domains[1].total_rows() == 50);
    CHECK(domains[0].dim == 1);  // split feature dropped
}

TEST_CASE("three features give eight labelled domains") {
    SeededRng rng(5);
    Matrix m(800, 5);
    for (std::size_t r = 0; r < 800; ++r) {
        for (std::size_t c = 0; c < 5; ++c) m(r, c) = rng.normal();
    }
    SplitSpec spec;
    spec.feature_indices = {2, 3, 4};
    spec.standardize = false;
    auto domains = median_split(m, spec);
    REQUIRE(domains.size() == 8);
    std::set<std::string> names;
    std::size_t total = 0;
    for (const auto& d : domains) {
        names.insert(d.name);
        total += d.total_rows();
        CHECK(d.dim == 2);
    }
    CHECK(total == 800);
    CHECK(names.count("domain_+++") == 1);
    CHECK(names.count("domain_---") == 1);
}

TEST_CASE("tied split features stay balanced") {
    // single constant split feature: pure alternation, sizes differ by <= 1
    Matrix m(101, 2);
    for (std::size_t r = 0; r < 101; ++r) {
        m(r, 0) = static_cast<double>(r);
        m(r, 1) = 7.0;
    }
    SplitSpec spec;
    spec.feature_indices = {1};
    spec.standardize = false;
    auto two = median_split(m, spec);
    const auto s0 = two[0].total_rows(), s1 = two[1].total_rows();
    CHECK((s0 > s1 ? s0 - s1 : s1 - s0) <= 1);

    // three constant split features: the stagger spreads rows over all 8 patterns
    Matrix m3(160, 4);
    for (std::size_t r = 0; r < 160; ++r) {
        m3(r, 0) = static_cast<double>(r);
        m3(r, 1) = m3(r, 2) = m3(r, 3) = 1.0;
    }
    SplitSpec spec3;
    spec3.feature_indices = {1, 2, 3};
    spec3.standardize = false;
    auto eight = median_split(m3, spec3);
    std::size_t lo = 160, hi = 0;
    for (const auto& d : eight) {
        lo = std::min(lo, d.total_rows());
        hi = std::max(hi, d.total_rows());
    }
    CHECK(hi - lo <= 3);  // at most m
}

TEST_CASE("split sizes follow the 80/10/10 rule") {
    SeededRng rng(3);
    Matrix m(997, 1);
    for (std::size_t r = 0; r < 997; ++r) m(r, 0) = rng.normal();
    auto splits = split_80_10_10(m, rng);
    CHECK(splits[0].rows() == 997 * 8 / 10);
    CHECK(splits[1].rows() == 99);
    CHECK(splits[2].rows() == 997 - 997 * 8 / 10 - 99);

    // union equals the original, no duplicates
    std::multiset<double> original(m.data(), m.data() + m.size());
    std::multiset<double> recovered;
    for (const auto& s : splits) {
        for (std::size_t r = 0; r < s.rows(); ++r) recovered.insert(s(r, 0));
    }
    CHECK(original == recovered);
}

TEST_CASE("standardization is fitted on pooled train rows only") {
    SeededRng rng(21);
    Matrix m(400, 3);
    for (std::size_t r = 0; r < 400; ++r) {
        m(r, 0) = 5.0 + 2.0 * rng.normal();
        m(r, 1) = -3.0 + 0.5 * rng.normal();
        m(r, 2) = rng.normal();  // split feature
    }
    SplitSpec spec;
    spec.feature_indices = {2};
    spec.standardize = true;
    spec.seed = 4;
    auto domains = median_split(m, spec);

    // pooled train columns are exactly standardized
    for (std::size_t c = 0; c < 2; ++c) {
        double mean = 0.0, sq = 0.0;
        std::size_t n = 0;
        for (const auto& d : domains) {
            for (std::size_t r = 0; r < d.train.rows(); ++r) mean += d.train(r, c);
            n += d.train.rows();
        }
        mean /= static_cast<double>(n);
        for (const auto& d : domains) {
            for (std::size_t r = 0; r < d.train.rows(); ++r) {
                sq += (d.train(r, c) - mean) * (d.train(r, c) - mean);
            }
        }
        const double sd = std::sqrt(sq / static_cast<double>(n));
        CHECK(std::abs(mean) <= 1e-10);
        CHECK(std::abs(sd - 1.0) <= 1e-10);
    }

    // val/test use the train statistics, so they are close to but not exactly
    // standardized
    double vmean = 0.0;
    std::size_t vn = 0;
    for (const auto& d : domains) {
        for (std::size_t r = 0; r < d.val.rows(); ++r) vmean += d.val(r, 0);
        vn += d.val.rows();
    }
    vmean /= static_cast<double>(vn);
    CHECK(vmean != 0.0);
    CHECK(std::abs(vmean) < 0.5);
}

TEST_CASE("median split refuses bad specs") {
    Matrix m(100, 2, 1.0);
    SplitSpec spec;
    spec.feature_indices = {};
    CHECK_THROWS_AS(median_split(m, spec), Error);
    spec.feature_indices = {0, 0};
    CHECK_THROWS_AS(median_split(m, spec), Error);
    spec.feature_indices = {5};
    CHECK_THROWS_AS(median_split(m, spec), Error);
    Matrix tiny(20, 3, 1.0);
    spec.feature_indices = {0, 1};
    CHECK_THROWS_AS(median_split(tiny, spec), Error);  // needs 4*10 rows
}

TEST_CASE("bundles round-trip and rewrite byte-identically") {
    auto dir = temp_dir("bundle");
    auto domains = gen_gaussians_1d(100, {0.0, 3.0}, {1.0, 1.0}, 31);
    save_bundle(dir / "b", domains, 31);
    auto loaded = load_bundle(dir / "b");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].train == domains[0].train);
    CHECK(loaded[1].test == domains[1].test);
    CHECK(loaded[0].provenance == domains[0].provenance);

    const std::string manifest_before = slurp(dir / "b" / "manifest.json");
    const std::string train_before = slurp(dir / "b" / domains[0].name / "train.csv");
    save_bundle(dir / "b", loaded, 31);
    CHECK(slurp(dir / "b" / "manifest.json") == manifest_before);
    CHECK(slurp(dir / "b" / domains[0].name / "train.csv") == train_before);
}

TEST_CASE("the tabular stand-in generator is deterministic and splittable") {
    Matrix a = gen_mixture_matrix(2000, 6, 4, 77);
    Matrix b = gen_mixture_matrix(2000, 6, 4, 77);
    CHECK(a == b);
    SplitSpec spec;
    spec.feature_indices = {5};
    spec.seed = 1;
    auto domains = median_split(a, spec);
    CHECK(domains.size() == 2);
    CHECK(domains[0].dim == 5);
}

TEST_SUITE_END();
