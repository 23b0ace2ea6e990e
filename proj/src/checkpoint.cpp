#include "dialograph/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

namespace dialograph {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& cfg) {
    return json{{"input_dim", cfg.input_dim},
                {"speaker_dim", cfg.speaker_dim},
                {"model_dim", cfg.model_dim},
                {"num_heads", cfg.num_heads},
                {"num_layers", cfg.num_layers},
                {"num_classes", cfg.num_classes},
                {"num_speaker_roles", cfg.num_speaker_roles},
                {"dropout", cfg.dropout},
                {"layernorm_eps", cfg.layernorm_eps}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.input_dim = j.at("input_dim").get<int>();
    cfg.speaker_dim = j.at("speaker_dim").get<int>();
    cfg.model_dim = j.at("model_dim").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.num_layers = j.at("num_layers").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.num_speaker_roles = j.at("num_speaker_roles").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.layernorm_eps = j.at("layernorm_eps").get<double>();
    return cfg;
}

std::vector<std::string> config_diff(const ModelConfig& a, const ModelConfig& b) {
    std::vector<std::string> diff;
    auto cmp = [&](const char* name, auto lhs, auto rhs) {
        if (lhs != rhs)
            diff.push_back(std::string(name) + " (checkpoint " + std::to_string(lhs) +
                           " vs config " + std::to_string(rhs) + ")");
    };
    cmp("input_dim", a.input_dim, b.input_dim);
    cmp("speaker_dim", a.speaker_dim, b.speaker_dim);
    cmp("model_dim", a.model_dim, b.model_dim);
    cmp("num_heads", a.num_heads, b.num_heads);
    cmp("num_layers", a.num_layers, b.num_layers);
    cmp("num_classes", a.num_classes, b.num_classes);
    cmp("num_speaker_roles", a.num_speaker_roles, b.num_speaker_roles);
    cmp("dropout", a.dropout, b.dropout);
    cmp("layernorm_eps", a.layernorm_eps, b.layernorm_eps);
    return diff;
}

} // namespace

void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::string& path) {
    auto refs = tensor_refs(const_cast<ModelParams&>(params));

    json manifest;
    manifest["config"] = config_to_json(cfg);
    manifest["blob"] = std::filesystem::path(path).filename().string() + ".bin";
    json tensors = json::array();
    long offset = 0;
    for (const auto& ref : refs) {
        tensors.push_back({{"name", ref.name}, {"shape", {ref.rows, ref.cols}}, {"offset", offset}});
        offset += ref.size();
    }
    manifest["tensors"] = std::move(tensors);

    {
        std::ofstream out(path);
        if (!out.good()) throw CheckpointError("cannot open '" + path + "' for writing");
        out << manifest.dump(2) << "\n";
        if (!out.good()) throw CheckpointError("write to '" + path + "' failed");
    }
    {
        std::ofstream blob(path + ".bin", std::ios::binary);
        if (!blob.good()) throw CheckpointError("cannot open '" + path + ".bin' for writing");
        for (const auto& ref : refs) {
            for (long k = 0; k < ref.size(); ++k) {
                const float v = static_cast<float>(ref.data[k]);
                blob.write(reinterpret_cast<const char*>(&v), sizeof(float));
            }
        }
        if (!blob.good()) throw CheckpointError("write to '" + path + ".bin' failed");
    }
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::optional<ModelConfig>& expected) {
    std::ifstream in(path);
    if (!in.good()) throw CheckpointError("cannot open checkpoint manifest '" + path + "'");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw CheckpointError("corrupt checkpoint manifest '" + path + "': " + e.what());
    }

    LoadedCheckpoint loaded;
    try {
        loaded.config = config_from_json(manifest.at("config"));
    } catch (const json::exception& e) {
        throw CheckpointError("corrupt checkpoint manifest '" + path + "': " + e.what());
    }
    if (expected) {
        auto diff = config_diff(loaded.config, *expected);
        if (!diff.empty()) {
            std::string msg = "checkpoint '" + path + "' config mismatch:";
            for (const auto& d : diff) msg += " " + d + ";";
            throw CheckpointError(msg);
        }
    }

    ModelConfig alloc_cfg = loaded.config;
    alloc_cfg.validate();
    loaded.params = init_params(alloc_cfg, 0);  // shapes only; values overwritten below
    auto refs = tensor_refs(loaded.params);

    const std::string blob_path =
        (std::filesystem::path(path).parent_path() /
         manifest.value("blob", std::filesystem::path(path).filename().string() + ".bin"))
            .string();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob.good()) throw CheckpointError("cannot open checkpoint blob '" + blob_path + "'");

    long expected_elems = 0;
    for (const auto& ref : refs) expected_elems += ref.size();
    blob.seekg(0, std::ios::end);
    const auto blob_bytes = static_cast<long>(blob.tellg());
    if (blob_bytes != expected_elems * static_cast<long>(sizeof(float)))
        throw CheckpointError("checkpoint blob '" + blob_path + "' has " +
                              std::to_string(blob_bytes) + " bytes, expected " +
                              std::to_string(expected_elems * sizeof(float)) +
                              " (truncated or corrupt)");
    blob.seekg(0, std::ios::beg);

    // honor manifest offsets rather than assuming enumeration order
    const auto& tensors = manifest.at("tensors");
    if (tensors.size() != refs.size())
        throw CheckpointError("checkpoint '" + path + "' tensor count mismatch");
    std::vector<float> raw(static_cast<size_t>(expected_elems));
    blob.read(reinterpret_cast<char*>(raw.data()), expected_elems * sizeof(float));
    if (!blob.good()) throw CheckpointError("read from '" + blob_path + "' failed");

    for (size_t i = 0; i < refs.size(); ++i) {
        const auto& t = tensors[i];
        const std::string name = t.at("name").get<std::string>();
        if (name != refs[i].name)
            throw CheckpointError("checkpoint tensor '" + name + "' unexpected; wanted '" +
                                  refs[i].name + "'");
        const long rows = t.at("shape")[0].get<long>();
        const long cols = t.at("shape")[1].get<long>();
        if (rows != refs[i].rows || cols != refs[i].cols)
            throw CheckpointError("checkpoint tensor '" + name + "' shape mismatch");
        const long offset = t.at("offset").get<long>();
        if (offset < 0 || offset + refs[i].size() > expected_elems)
            throw CheckpointError("checkpoint tensor '" + name + "' offset out of range");
        for (long k = 0; k < refs[i].size(); ++k)
            refs[i].data[k] = static_cast<double>(raw[static_cast<size_t>(offset + k)]);
    }
    return loaded;
}

} // namespace dialograph
