#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aub/alignment.hpp"
#include "aub/checkpoint.hpp"
#include "aub/data.hpp"
#include "aub/evaluate.hpp"

namespace aub {

/// Parsed experiment description. Source files are either flat sectioned
/// key=value text or a JSON object with the same section/key structure; both
/// are validated against the known schema (unknown keys are rejected).
struct ExperimentConfig {
    nlohmann::json root;
    std::string name;  // config file stem, used for run directories

    const nlohmann::json& section(const char* s) const;
    bool has(const char* section, const char* key) const;

    std::uint64_t seed() const;
    std::filesystem::path out_dir() const;

    std::uint64_t get_u64(const char* section, const char* key) const;
    std::uint64_t get_u64(const char* section, const char* key, std::uint64_t dflt) const;
    double get_double(const char* section, const char* key) const;
    double get_double(const char* section, const char* key, double dflt) const;
    bool get_bool(const char* section, const char* key, bool dflt) const;
    std::string get_string(const char* section, const char* key) const;
    std::string get_string(const char* section, const char* key,
                           const std::string& dflt) const;
    std::vector<double> get_doubles(const char* section, const char* key) const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Parses the flat key=value format ('#' comment lines, [section] headers,
/// comma-separated lists) into the JSON structure used everywhere else.
nlohmann::json parse_kv_config(std::istream& in, const std::string& origin);

void override_seed(ExperimentConfig& config, std::uint64_t seed);
void override_out_dir(ExperimentConfig& config, const std::filesystem::path& out);

/// Content hash (FNV-1a 64, hex) of everything that determines a training run:
/// seed plus the data / model / train sections, and the bundle manifest when
/// the data comes from a bundle on disk.
std::string config_fingerprint(const ExperimentConfig& config);

std::vector<DomainDataset> build_datasets(const ExperimentConfig& config);
AlignmentModel build_model(const ExperimentConfig& config, std::size_t dim,
                           std::size_t k);
TrainConfig build_train_config(const ExperimentConfig& config);
EvalOptions build_eval_options(const ExperimentConfig& config);

/// Subcommand bodies. Results go to `out`, progress/log lines to `err`; the
/// return value is the process exit code. All filesystem output lands under
/// the config's out_dir, and nothing is written until the whole configuration
/// has validated.
int cmd_gen_data(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
             std::ostream& out, std::ostream& err);
int cmd_translate(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                  std::size_t from_j, std::size_t to_j,
                  const std::filesystem::path& input_csv, std::ostream& out,
                  std::ostream& err);

struct CompareRow {
    std::string config_name;
    std::string mode;
    double test_aub = 0.0;
    std::size_t per_flow_params = 0;
    std::size_t t_params = 0;
    std::size_t q_params = 0;
    std::size_t total_params = 0;
    double wall_time_s = 0.0;
};

/// Trains (with caching on the config fingerprint) and evaluates every config,
/// then writes compare.csv and compare.md under out_dir. AUB_NUM_WORKERS
/// bounds how many configs run concurrently (default 1).
int cmd_compare(const std::vector<ExperimentConfig>& configs,
                const std::filesystem::path& out_dir, std::ostream& out,
                std::ostream& err);

/// Exposed for tests.
std::vector<CompareRow> run_compare(const std::vector<ExperimentConfig>& configs,
                                    const std::filesystem::path& out_dir,
                                    std::ostream& err);

std::string fnv1a64_hex(std::string_view text);

}  // namespace aub
