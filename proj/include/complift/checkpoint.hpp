#pragma once

// Model checkpoint: one line of JSON (architecture, schedule betas, condition
// id, seed, tensor table) terminated by '\n', followed by the raw
// little-endian float32 parameters, C-order, concatenated in declared layer
// order (w1 b1 w2 b2 w3 b3 w4 b4).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "complift/energy_net.hpp"
#include "complift/error.hpp"
#include "complift/timestep_sampling.hpp"

namespace complift {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

struct checkpoint_info {
    std::uint64_t seed = 0;
    nlohmann::json train;  // free-form training settings, recorded verbatim
    std::optional<loss_history> history;  // recent per-timestep training losses
};

inline void save_checkpoint(const energy_net& model, const std::filesystem::path& path,
                            const checkpoint_info& info = {}) {
    nlohmann::ordered_json header;
    header["format"] = "complift.energy_net";
    header["version"] = 1;
    const auto& a = model.architecture();
    header["architecture"] = {{"input_dim", a.input_dim}, {"hidden", a.hidden},     {"time_dim", a.time_dim},
                              {"hidden_layers", 3},       {"activation", "silu"}, {"time_embedding", "sinusoidal"}};
    header["betas"] = std::vector<double>(model.schedule().betas().begin(), model.schedule().betas().end());
    header["condition"] = model.condition();
    header["seed"] = info.seed;
    if (!info.train.is_null()) header["train"] = info.train;
    if (info.history) {
        auto h = nlohmann::ordered_json::array();
        for (int t = 1; t <= info.history->steps(); ++t)
            h.push_back(std::vector<double>(info.history->at(t).begin(), info.history->at(t).end()));
        header["loss_history"] = h;
    }
    header["dtype"] = "float32";
    header["endianness"] = "little";
    header["layout"] = "C";
    auto tensors = nlohmann::ordered_json::array();
    const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"};
    int k = 0;
    model.params().for_each([&](const float*, Eigen::Index r, Eigen::Index c) {
        tensors.push_back({{"name", names[k++]}, {"shape", c == 1 ? std::vector<Eigen::Index>{r}
                                                                   : std::vector<Eigen::Index>{r, c}}});
    });
    header["tensors"] = tensors;
    header["param_count"] = model.params().size();

    std::vector<float> blob;
    blob.reserve(model.params().size());
    model.params().for_each([&](const float* p, Eigen::Index r, Eigen::Index c) {
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) blob.push_back(p[j * r + i]);
    });

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error("cannot write checkpoint " + path.string());
    const std::string line = header.dump() + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw error("failed writing checkpoint " + path.string());
}

inline energy_net load_checkpoint(const std::filesystem::path& path, checkpoint_info* info = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw missing_input_error("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw missing_input_error("empty checkpoint " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("bad checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format", "") != "complift.energy_net") throw config_error("not a checkpoint: " + path.string());
    if (header.value("dtype", "") != "float32" || header.value("endianness", "") != "little")
        throw config_error("unsupported checkpoint dtype/endianness");
    net_architecture arch;
    arch.input_dim = header["architecture"]["input_dim"].get<int>();
    arch.hidden = header["architecture"]["hidden"].get<int>();
    arch.time_dim = header["architecture"]["time_dim"].get<int>();
    energy_net model(arch, diffusion_schedule(header["betas"].get<std::vector<double>>()),
                     header["condition"].get<std::string>());
    const auto count = header["param_count"].get<std::size_t>();
    if (count != model.params().size()) throw config_error("checkpoint parameter count does not match architecture");
    std::vector<float> blob(count);
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
        throw config_error("truncated checkpoint " + path.string());
    std::size_t off = 0;
    model.params().for_each([&](float* p, Eigen::Index r, Eigen::Index c) {
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < c; ++j) p[j * r + i] = blob[off++];
    });
    if (!model.params().all_finite()) throw numerical_error("checkpoint contains non-finite parameters");
    if (info) {
        info->seed = header.value("seed", std::uint64_t{0});
        if (header.contains("train")) info->train = header["train"];
        if (header.contains("loss_history")) {
            const auto& h = header["loss_history"];
            loss_history hist(static_cast<int>(h.size()));
            for (std::size_t i = 0; i < h.size(); ++i)
                for (const auto& v : h[i]) hist.record(static_cast<int>(i) + 1, v.get<double>());
            info->history = std::move(hist);
        }
    }
    return model;
}

}  // namespace complift
