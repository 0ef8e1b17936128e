#include "aub/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace aub {

namespace {

// allowed keys per section; unknown keys are configuration errors
const std::vector<std::pair<std::string, std::vector<std::string>>> kSchema = {
    {"", {"seed", "out_dir"}},
    {"data",
     {"kind", "n", "noise_sd", "n_components", "box", "sd", "means", "sds", "dim",
      "split_features", "feature_indices", "standardize", "path", "has_header"}},
    {"model",
     {"flow", "n_layers", "hidden_dim", "n_hidden", "scale_clamp", "density",
      "mog_components", "q_n_layers", "q_hidden_dim", "q_n_hidden", "weights"}},
    {"train",
     {"mode", "max_epochs", "batch_size", "optimizer", "lr_q", "lr_t", "patience"}},
    {"eval", {"energy", "roundtrip"}},
};

void validate_keys(const nlohmann::json& root, const std::string& origin) {
    require(root.is_object(), "config '", origin, "' must be an object");
    for (const auto& [key, value] : root.items()) {
        const auto sec = std::find_if(kSchema.begin(), kSchema.end(),
                                      [&](const auto& s) { return s.first == key; });
        if (sec == kSchema.end() || key.empty()) {
            // top-level scalar?
            const auto& top = kSchema.front().second;
            if (std::find(top.begin(), top.end(), key) != top.end()) continue;
            fail("unknown config section or key '", key, "' in '", origin, "'");
        }
        require(value.is_object(), "config section '", key, "' in '", origin,
                "' must hold key = value entries");
        for (const auto& [k2, v2] : value.items()) {
            (void)v2;
            if (std::find(sec->second.begin(), sec->second.end(), k2) == sec->second.end()) {
                fail("unknown config key '", key, ".", k2, "' in '", origin, "'");
            }
        }
    }
}

nlohmann::json parse_scalar(const std::string& raw) {
    if (raw == "true") return true;
    if (raw == "false") return false;
    {
        std::uint64_t u = 0;
        auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), u);
        if (ec == std::errc() && p == raw.data() + raw.size()) return u;
    }
    {
        std::int64_t i = 0;
        auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), i);
        if (ec == std::errc() && p == raw.data() + raw.size()) return i;
    }
    {
        double d = 0.0;
        auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), d);
        if (ec == std::errc() && p == raw.data() + raw.size()) return d;
    }
    return raw;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

nlohmann::json parse_kv_config(std::istream& in, const std::string& origin) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* current = &root;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            require(t.back() == ']', "bad section header at line ", line_no, " in '",
                    origin, "'");
            const std::string name = trim(t.substr(1, t.size() - 2));
            require(!name.empty(), "empty section name at line ", line_no);
            root[name] = nlohmann::json::object();
            current = &root[name];
            continue;
        }
        const std::size_t eq = t.find('=');
        require(eq != std::string::npos, "expected key = value at line ", line_no,
                " in '", origin, "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        require(!key.empty(), "empty key at line ", line_no, " in '", origin, "'");
        require(!current->contains(key), "duplicate key '", key, "' at line ", line_no);
        if (value.find(',') != std::string::npos) {
            nlohmann::json arr = nlohmann::json::array();
            std::size_t start = 0;
            while (start <= value.size()) {
                const std::size_t comma = value.find(',', start);
                const std::string cell =
                    trim(comma == std::string::npos ? value.substr(start)
                                                    : value.substr(start, comma - start));
                require(!cell.empty(), "empty list element for key '", key, "' at line ",
                        line_no);
                arr.push_back(parse_scalar(cell));
                if (comma == std::string::npos) break;
                start = comma + 1;
            }
            (*current)[key] = std::move(arr);
        } else {
            (*current)[key] = parse_scalar(value);
        }
    }
    return root;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open config '", path.string(), "'");
    ExperimentConfig config;
    config.name = path.stem().string();
    if (path.extension() == ".json") {
        config.root = nlohmann::json::parse(in);
    } else {
        config.root = parse_kv_config(in, path.string());
    }
    validate_keys(config.root, path.string());
    require(config.root.contains("seed"), "config '", path.string(), "' needs a seed");
    return config;
}

// ---------------------------------------------------------------------------
// accessors

const nlohmann::json& ExperimentConfig::section(const char* s) const {
    require(root.contains(s), "config is missing the [", s, "] section");
    return root.at(s);
}

bool ExperimentConfig::has(const char* sec, const char* key) const {
    return root.contains(sec) && root.at(sec).contains(key);
}

namespace {
const nlohmann::json& fetch(const ExperimentConfig& c, const char* sec, const char* key) {
    const auto& s = c.section(sec);
    require(s.contains(key), "config is missing ", sec, ".", key);
    return s.at(key);
}

template <typename T>
T as(const nlohmann::json& v, const char* sec, const char* key) {
    try {
        return v.get<T>();
    } catch (const nlohmann::json::exception&) {
        fail("config value ", sec, ".", key, " has the wrong type: ", v.dump());
    }
}
}  // namespace

std::uint64_t ExperimentConfig::seed() const {
    require(root.contains("seed"), "config needs a top-level seed");
    return root.at("seed").get<std::uint64_t>();
}

std::filesystem::path ExperimentConfig::out_dir() const {
    if (root.contains("out_dir")) return root.at("out_dir").get<std::string>();
    return std::filesystem::path("runs") / name;
}

std::uint64_t ExperimentConfig::get_u64(const char* sec, const char* key) const {
    return as<std::uint64_t>(fetch(*this, sec, key), sec, key);
}
std::uint64_t ExperimentConfig::get_u64(const char* sec, const char* key,
                                        std::uint64_t dflt) const {
    return has(sec, key) ? get_u64(sec, key) : dflt;
}
double ExperimentConfig::get_double(const char* sec, const char* key) const {
    return as<double>(fetch(*this, sec, key), sec, key);
}
double ExperimentConfig::get_double(const char* sec, const char* key, double dflt) const {
    return has(sec, key) ? get_double(sec, key) : dflt;
}
bool ExperimentConfig::get_bool(const char* sec, const char* key, bool dflt) const {
    return has(sec, key) ? as<bool>(fetch(*this, sec, key), sec, key) : dflt;
}
std::string ExperimentConfig::get_string(const char* sec, const char* key) const {
    return as<std::string>(fetch(*this, sec, key), sec, key);
}
std::string ExperimentConfig::get_string(const char* sec, const char* key,
                                         const std::string& dflt) const {
    return has(sec, key) ? get_string(sec, key) : dflt;
}
std::vector<double> ExperimentConfig::get_doubles(const char* sec, const char* key) const {
    const auto& v = fetch(*this, sec, key);
    if (v.is_number()) return {v.get<double>()};
    return as<std::vector<double>>(v, sec, key);
}

void override_seed(ExperimentConfig& config, std::uint64_t seed) {
    config.root["seed"] = seed;
}
void override_out_dir(ExperimentConfig& config, const std::filesystem::path& out) {
    config.root["out_dir"] = out.string();
}

// ---------------------------------------------------------------------------
// fingerprint

std::string fnv1a64_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string config_fingerprint(const ExperimentConfig& config) {
    nlohmann::json key;
    key["seed"] = config.seed();
    for (const char* sec : {"data", "model", "train"}) {
        if (config.root.contains(sec)) key[sec] = config.root.at(sec);
    }
    if (config.has("data", "kind") && config.get_string("data", "kind") == "bundle") {
        key["bundle_manifest"] = bundle_manifest(config.get_string("data", "path"));
    }
    return fnv1a64_hex(key.dump());
}

// ---------------------------------------------------------------------------
// builders

std::vector<DomainDataset> build_datasets(const ExperimentConfig& config) {
    const std::string kind = config.get_string("data", "kind");
    const std::uint64_t seed = SeededRng(config.seed()).derive(0xda7aull).seed();
    if (kind == "moons") {
        return gen_two_moons(config.get_u64("data", "n", 1000),
                             config.get_double("data", "noise_sd", 0.05), seed);
    }
    if (kind == "blobs") {
        return gen_blobs(config.get_u64("data", "n", 1000),
                         config.get_u64("data", "n_components", 3),
                         config.get_double("data", "box", 3.0),
                         config.get_double("data", "sd", 0.5), seed);
    }
    if (kind == "gaussians_1d") {
        auto means = config.get_doubles("data", "means");
        auto sds = config.get_doubles("data", "sds");
        return gen_gaussians_1d(config.get_u64("data", "n", 2000), std::move(means),
                                std::move(sds), seed);
    }
    if (kind == "tabular" || kind == "csv") {
        Matrix all;
        if (kind == "tabular") {
            all = gen_mixture_matrix(config.get_u64("data", "n", 5000),
                                     config.get_u64("data", "dim", 6),
                                     config.get_u64("data", "n_components", 4), seed);
        } else {
            all = load_csv(config.get_string("data", "path"),
                           config.get_bool("data", "has_header", false));
        }
        SplitSpec spec;
        spec.standardize = config.get_bool("data", "standardize", true);
        spec.seed = seed;
        if (config.has("data", "feature_indices")) {
            for (double f : config.get_doubles("data", "feature_indices")) {
                spec.feature_indices.push_back(static_cast<std::size_t>(f));
            }
        } else {
            const std::size_t m = config.get_u64("data", "split_features", 1);
            require(m >= 1 && m <= 4, "data.split_features must be 1..4");
            require(all.cols() > m, "not enough columns to split on the last ", m);
            for (std::size_t f = all.cols() - m; f < all.cols(); ++f) {
                spec.feature_indices.push_back(f);
            }
        }
        return median_split(all, spec);
    }
    if (kind == "bundle") {
        return load_bundle(config.get_string("data", "path"));
    }
    fail("unknown data.kind '", kind, "'");
}

AlignmentModel build_model(const ExperimentConfig& config, std::size_t dim,
                           std::size_t k) {
    const std::string mode = config.get_string("train", "mode", "aub");
    SeededRng model_rng = SeededRng(config.seed()).derive(0x30de1ull);

    const std::string flow_kind = config.get_string("model", "flow", "realnvp");
    const std::size_t n_layers = config.get_u64("model", "n_layers", 5);
    const std::size_t hidden_dim = config.get_u64("model", "hidden_dim", 64);
    const std::size_t n_hidden = config.get_u64("model", "n_hidden", 1);
    const double scale_clamp = config.get_double("model", "scale_clamp", 5.0);

    std::vector<std::shared_ptr<Flow>> flows;
    for (std::size_t j = 0; j < k; ++j) {
        if (mode == "lrmf" && j == 1) {
            flows.push_back(std::make_shared<IdentityFlow>(dim));
            continue;
        }
        if (flow_kind == "identity") {
            flows.push_back(std::make_shared<IdentityFlow>(dim));
        } else if (flow_kind == "affine") {
            flows.push_back(std::make_shared<AffineFlow>(dim));
        } else if (flow_kind == "realnvp") {
            flows.push_back(make_realnvp(dim, n_layers, hidden_dim, n_hidden,
                                         model_rng.derive(j).seed(), scale_clamp));
        } else {
            fail("unknown model.flow '", flow_kind, "'");
        }
    }

    const std::string density_kind = config.get_string("model", "density", "diag_gauss");
    std::shared_ptr<Density> density;
    if (density_kind == "standard_normal") {
        density = std::make_shared<FixedStandardNormal>(dim);
    } else if (density_kind == "diag_gauss") {
        density = std::make_shared<DiagonalGaussian>(dim);
    } else if (density_kind == "mog") {
        SeededRng mog_rng = model_rng.derive(0x906ull);
        density = std::make_shared<GaussianMixture>(
            dim, config.get_u64("model", "mog_components", 3), mog_rng);
    } else if (density_kind == "realnvp") {
        auto q_flow = make_realnvp(dim, config.get_u64("model", "q_n_layers", n_layers),
                                   config.get_u64("model", "q_hidden_dim", hidden_dim),
                                   config.get_u64("model", "q_n_hidden", n_hidden),
                                   model_rng.derive(0x900ull).seed(), scale_clamp);
        density = std::make_shared<FlowDensity>(std::move(q_flow));
    } else {
        fail("unknown model.density '", density_kind, "'");
    }

    std::vector<double> weights;
    if (config.has("model", "weights")) weights = config.get_doubles("model", "weights");
    return make_alignment_model(std::move(flows), std::move(density), std::move(weights));
}

TrainConfig build_train_config(const ExperimentConfig& config) {
    TrainConfig tc;
    tc.max_epochs = config.get_u64("train", "max_epochs", 200);
    tc.batch_size = config.get_u64("train", "batch_size", 256);
    tc.seed = config.seed();
    tc.patience = config.get_u64("train", "patience", 0);
    const std::string mode = config.get_string("train", "mode", "aub");
    if (mode == "aub") {
        tc.mode = TrainMode::Aub;
    } else if (mode == "alignflow_mle") {
        tc.mode = TrainMode::AlignFlowMle;
    } else if (mode == "lrmf") {
        tc.mode = TrainMode::Lrmf;
    } else {
        fail("unknown train.mode '", mode, "'");
    }
    const std::string opt = config.get_string("train", "optimizer", "adam");
    OptimizerKind kind;
    if (opt == "adam") {
        kind = OptimizerKind::Adam;
    } else if (opt == "sgd") {
        kind = OptimizerKind::Sgd;
    } else {
        fail("unknown train.optimizer '", opt, "'");
    }
    tc.q_optimizer.kind = kind;
    tc.t_optimizer.kind = kind;
    tc.q_optimizer.learning_rate = config.get_double("train", "lr_q", 1e-3);
    tc.t_optimizer.learning_rate = config.get_double("train", "lr_t", 1e-3);
    return tc;
}

EvalOptions build_eval_options(const ExperimentConfig& config) {
    EvalOptions opt;
    opt.energy = config.get_bool("eval", "energy", true);
    opt.roundtrip = config.get_bool("eval", "roundtrip", true);
    return opt;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_data(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    auto datasets = build_datasets(config);
    const auto dir = config.out_dir() / "bundle";
    save_bundle(dir, datasets, config.seed());
    err << "wrote bundle with " << datasets.size() << " domains to " << dir.string()
        << "\n";
    out << "bundle_dir=" << dir.string() << "\n";
    return 0;
}

namespace {
struct PreparedRun {
    std::vector<DomainDataset> datasets;
    AlignmentModel model;
    TrainConfig train_config;
    std::string fingerprint;
};

PreparedRun prepare_run(const ExperimentConfig& config) {
    PreparedRun run;
    run.datasets = build_datasets(config);
    require(!run.datasets.empty(), "no domains produced by the data section");
    const std::size_t dim = run.datasets[0].dim;
    run.model = build_model(config, dim, run.datasets.size());
    run.train_config = build_train_config(config);
    run.train_config.validate_with(run.model);
    run.fingerprint = config_fingerprint(config);
    return run;
}

void restore_params(AlignmentModel& model, const std::vector<std::vector<double>>& snap) {
    for (std::size_t j = 0; j < model.k(); ++j) model.flows[j]->params().restore(snap[j]);
    model.density->params().restore(snap.back());
}
}  // namespace

int cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    PreparedRun run = prepare_run(config);  // fully validates before any output
    const auto dir = config.out_dir();
    std::filesystem::create_directories(dir);

    TrainTrace trace;
    try {
        trace = train(run.model, run.datasets, run.train_config);
    } catch (const Error& e) {
        err << "training failed: " << e.what() << "\n";
        return 2;
    }

    CheckpointMeta meta{config.seed(), run.fingerprint, trace.best_epoch};
    save_checkpoint(dir / "best.ckpt", run.model, meta);

    auto best_snapshot = [&] {
        std::vector<std::vector<double>> s;
        for (const auto& f : run.model.flows) s.push_back(f->params().snapshot());
        s.push_back(run.model.density->params().snapshot());
        return s;
    }();
    restore_params(run.model, trace.final_params);
    save_checkpoint(dir / "final.ckpt", run.model, meta);
    restore_params(run.model, best_snapshot);

    write_trace_jsonl(dir / "trace.jsonl", trace);
    err << "trained " << trace.epochs.size() << " epochs; best epoch "
        << trace.best_epoch << " with validation aub " << trace.best_val_aub << "\n";
    out << "best_val_aub=" << trace.best_val_aub << "\n";
    return 0;
}

int cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
             std::ostream& out, std::ostream& err) {
    auto datasets = build_datasets(config);
    auto loaded = load_checkpoint(checkpoint);
    const std::string fp = config_fingerprint(config);
    require(loaded.meta.fingerprint == fp, "fingerprint mismatch: checkpoint was trained as ",
            loaded.meta.fingerprint, " but this config hashes to ", fp);

    EvalReport report =
        evaluate_model(loaded.model, datasets, fp, build_eval_options(config));
    const auto dir = config.out_dir();
    std::filesystem::create_directories(dir);
    std::ofstream json_out(dir / "eval.json", std::ios::binary);
    json_out << report.to_json().dump(2) << '\n';
    require(json_out.good(), "failed writing eval report");
    err << "evaluated checkpoint " << checkpoint.string() << "\n";
    out << "test_aub=" << report.test_aub << "\n";
    return 0;
}

int cmd_translate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                  std::size_t from_j, std::size_t to_j,
                  const std::filesystem::path& input_csv, std::ostream& out,
                  std::ostream& err) {
    auto loaded = load_checkpoint(checkpoint);
    Matrix input = load_csv(input_csv.string(), false);
    Matrix translated = translate(loaded.model, input, from_j, to_j);
    const auto dir = config.out_dir();
    std::filesystem::create_directories(dir);
    std::ostringstream name;
    name << "translated_" << from_j << "_to_" << to_j << ".csv";
    const auto path = dir / name.str();
    save_csv(path, translated);
    err << "translated " << input.rows() << " rows from domain " << from_j
        << " to domain " << to_j << "\n";
    out << "translated_csv=" << path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// compare

std::vector<CompareRow> run_compare(const std::vector<ExperimentConfig>& configs,
                                    const std::filesystem::path& out_dir,
                                    std::ostream& err) {
    require(!configs.empty(), "compare needs at least one config");
    std::vector<CompareRow> rows(configs.size());
    std::mutex log_mutex;

    std::size_t workers = 1;
    if (const char* env = std::getenv("AUB_NUM_WORKERS")) {
        workers = std::max<std::size_t>(1, std::strtoul(env, nullptr, 10));
    }
    workers = std::min(workers, configs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) break;
            ExperimentConfig config = configs[i];
            override_out_dir(config, out_dir / config.name);
            const std::string fp = config_fingerprint(config);

            bool cached = false;
            const auto ckpt = config.out_dir() / "best.ckpt";
            if (std::filesystem::exists(ckpt)) {
                try {
                    cached = load_checkpoint(ckpt).meta.fingerprint == fp;
                } catch (const Error&) {
                    cached = false;
                }
            }
            std::ostringstream local_log;
            double wall = 0.0;
            if (!cached) {
                PreparedRun run = prepare_run(config);
                std::filesystem::create_directories(config.out_dir());
                TrainTrace trace = train(run.model, run.datasets, run.train_config);
                wall = trace.epochs.empty() ? 0.0 : trace.epochs.back().wall_time_s;
                CheckpointMeta meta{config.seed(), fp, trace.best_epoch};
                save_checkpoint(ckpt, run.model, meta);
                write_trace_jsonl(config.out_dir() / "trace.jsonl", trace);
                local_log << "trained " << config.name << " (" << trace.epochs.size()
                          << " epochs)\n";
            } else {
                local_log << "reusing cached run for " << config.name << "\n";
            }

            auto datasets = build_datasets(config);
            auto loaded = load_checkpoint(ckpt);
            EvalReport report =
                evaluate_model(loaded.model, datasets, fp, build_eval_options(config));
            std::ofstream json_out(config.out_dir() / "eval.json", std::ios::binary);
            json_out << report.to_json().dump(2) << '\n';

            CompareRow row;
            row.config_name = config.name;
            row.mode = config.get_string("train", "mode", "aub");
            row.test_aub = report.test_aub;
            row.per_flow_params = report.params.per_flow.empty() ? 0 : report.params.per_flow[0];
            row.t_params = report.params.total - report.params.density;
            row.q_params = report.params.density;
            row.total_params = report.params.total;
            row.wall_time_s = wall;
            rows[i] = row;
            std::lock_guard<std::mutex> lock(log_mutex);
            err << local_log.str();
        }
    };

    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return rows;
}

int cmd_compare(const std::vector<ExperimentConfig>& configs,
                const std::filesystem::path& out_dir, std::ostream& out,
                std::ostream& err) {
    require(configs.size() >= 1, "compare needs configs");
    // all configs must describe the same data
    const std::string data0 = configs[0].root.contains("data")
                                  ? configs[0].root.at("data").dump()
                                  : "";
    for (const auto& c : configs) {
        const std::string d = c.root.contains("data") ? c.root.at("data").dump() : "";
        require(d == data0, "compare configs disagree on the data section ('", c.name,
                "')");
    }
    std::filesystem::create_directories(out_dir);
    auto rows = run_compare(configs, out_dir, err);

    std::ofstream csv(out_dir / "compare.csv", std::ios::binary);
    csv << "config,mode,test_aub,per_flow_params,t_params,q_params,total_params,wall_time_s\n";
    for (const auto& r : rows) {
        csv << r.config_name << ',' << r.mode << ',' << r.test_aub << ','
            << r.per_flow_params << ',' << r.t_params << ',' << r.q_params << ','
            << r.total_params << ',' << r.wall_time_s << '\n';
    }

    std::ofstream md(out_dir / "compare.md", std::ios::binary);
    md << "| config | mode | test AUB (nats) | per-flow params | T params | Q params | "
          "total | wall time (s) |\n";
    md << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        md << "| " << r.config_name << " | " << r.mode << " | " << r.test_aub << " | "
           << r.per_flow_params << " | " << r.t_params << " | " << r.q_params << " | "
           << r.total_params << " | " << r.wall_time_s << " |\n";
    }

    for (const auto& r : rows) {
        out << r.config_name << " test_aub=" << r.test_aub << "\n";
    }
    err << "wrote " << (out_dir / "compare.csv").string() << "\n";
    return 0;
}

}  // namespace aub
