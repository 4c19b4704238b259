#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "advlab/network.hpp"

namespace advlab {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::ordered_json layer_to_json(const LayerSpec& l) {
    nlohmann::ordered_json j;
    j["kind"] = kind_name(l.kind);
    if (l.kind == LayerSpec::Kind::conv2d) {
        j["out_channels"] = l.out;
        j["kernel_size"] = l.kernel;
        j["stride"] = l.stride;
    } else if (l.kind == LayerSpec::Kind::dense) {
        j["out_features"] = l.out;
    }
    return j;
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
    LayerSpec l;
    l.kind = parse_kind(j.at("kind").get<std::string>());
    if (l.kind == LayerSpec::Kind::conv2d) {
        l.out = j.at("out_channels").get<std::size_t>();
        l.kernel = j.at("kernel_size").get<std::size_t>();
        l.stride = j.value("stride", std::size_t{1});
    } else if (l.kind == LayerSpec::Kind::dense) {
        l.out = j.at("out_features").get<std::size_t>();
    }
    return l;
}

/// Keys are emitted in a fixed order and doubles in shortest round-trip form, so equal
/// networks give equal bytes and save(load(save(n))) == save(n).
inline std::string checkpoint_json(const Network& net) {
    nlohmann::ordered_json j;
    j["version"] = kCheckpointVersion;
    j["class_count"] = net.class_count();
    j["input_shape"] = net.input_shape().dims();
    auto& layers = j["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : net.layers()) {
        layers.push_back(layer_to_json(l));
    }
    auto& params = j["params"] = nlohmann::ordered_json::object();
    for (const auto& [name, t] : net.params()) {
        nlohmann::ordered_json p;
        p["shape"] = t.shape().dims();
        p["data"] = t.data();
        params[name] = std::move(p);
    }
    return j.dump() + "\n";
}

inline Network network_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + j.at("version").dump());
    }
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) {
        layers.push_back(layer_from_json(l));
    }
    ParamMap params;
    for (const auto& [name, p] : j.at("params").items()) {
        params.emplace(name, Tensor(Shape(p.at("shape").get<std::vector<std::size_t>>()),
                                    p.at("data").get<std::vector<double>>()));
    }
    return Network(std::move(layers), Shape(j.at("input_shape").get<std::vector<std::size_t>>()),
                   j.at("class_count").get<std::size_t>(), std::move(params));
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    out << checkpoint_json(net);
}

inline Network load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return network_from_json(ss.str());
}

}  // namespace advlab
