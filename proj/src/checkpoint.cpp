#include "aub/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace aub {

namespace {
void write_f64_le(std::ofstream& out, std::span<const double> values) {
    static_assert(sizeof(double) == 8);
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap64(bits);
        }
        char buf[8];
        std::memcpy(buf, &bits, 8);
        out.write(buf, 8);
    }
}

void read_f64_le(std::ifstream& in, std::span<double> values) {
    for (double& v : values) {
        char buf[8];
        in.read(buf, 8);
        require(in.good(), "checkpoint truncated while reading parameters");
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap64(bits);
        }
        std::memcpy(&v, &bits, 8);
    }
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AlignmentModel& model,
                     const CheckpointMeta& meta) {
    model.validate();
    nlohmann::json header;
    header["format"] = "aub-checkpoint";
    header["version"] = 1;
    header["dim"] = model.dim();
    header["k"] = model.k();
    header["weights"] = model.weights;
    header["seed"] = meta.seed;
    header["fingerprint"] = meta.fingerprint;
    header["best_epoch"] = meta.best_epoch;
    nlohmann::json flows = nlohmann::json::array();
    nlohmann::json flow_lengths = nlohmann::json::array();
    for (const auto& f : model.flows) {
        flows.push_back(f->spec());
        flow_lengths.push_back(f->param_count());
    }
    header["flows"] = flows;
    header["flow_param_lengths"] = flow_lengths;
    header["density"] = model.density->spec();
    header["density_param_length"] = model.density->param_count();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write checkpoint '", path.string(), "'");
    out << header.dump() << '\n';
    for (const auto& f : model.flows) write_f64_le(out, f->params().values());
    write_f64_le(out, model.density->params().values());
    require(out.good(), "write failed for checkpoint '", path.string(), "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint '", path.string(), "'");
    std::string header_line;
    require(static_cast<bool>(std::getline(in, header_line)), "checkpoint has no header");
    LoadedCheckpoint out;
    out.header = nlohmann::json::parse(header_line);
    require(out.header.value("format", "") == "aub-checkpoint",
            "'", path.string(), "' is not an aub checkpoint");

    out.meta.seed = out.header.at("seed").get<std::uint64_t>();
    out.meta.fingerprint = out.header.at("fingerprint").get<std::string>();
    out.meta.best_epoch = out.header.value("best_epoch", std::size_t{0});

    std::vector<std::shared_ptr<Flow>> flows;
    const auto& flow_specs = out.header.at("flows");
    const auto& flow_lengths = out.header.at("flow_param_lengths");
    for (std::size_t j = 0; j < flow_specs.size(); ++j) {
        auto flow = flow_from_spec(flow_specs[j]);
        require(flow->param_count() == flow_lengths[j].get<std::size_t>(),
                "flow ", j, " parameter count mismatch in checkpoint");
        read_f64_le(in, flow->params().values());
        flows.push_back(std::move(flow));
    }
    auto density = density_from_spec(out.header.at("density"));
    require(density->param_count() == out.header.at("density_param_length").get<std::size_t>(),
            "density parameter count mismatch in checkpoint");
    read_f64_le(in, density->params().values());

    out.model = make_alignment_model(std::move(flows), std::move(density),
                                     out.header.at("weights").get<std::vector<double>>());
    return out;
}

}  // namespace aub
