#include "tuplenet/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>

namespace tuplenet {

namespace fs = std::filesystem;
using nlohmann::json;

void save_model(const fs::path& dir, Model& model) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "model.json");
        out << model.describe().dump(2) << '\n';
        if (!out) throw Error("failed to write " + (dir / "model.json").string());
    }
    std::string blob;
    for (const Parameter* p : model.parameters())
        for (float v : p->value.data()) {
            const auto u = std::bit_cast<std::uint32_t>(v);
            for (int i = 0; i < 4; ++i) blob.push_back(static_cast<char>((u >> (8 * i)) & 0xFFu));
        }
    std::ofstream out(dir / "params.bin", std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw Error("failed to write " + (dir / "params.bin").string());
}

namespace {

Tensor placeholder(std::size_t k, std::size_t w, std::size_t c) { return Tensor({k, w, c}); }

std::unique_ptr<Layer> layer_from_json(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv") {
        ConvFilterBank bank(placeholder(j.at("filters"), j.at("width"), j.at("channels")),
                            activation_from_string(j.at("activation")), j.value("stride", std::size_t{1}));
        return std::make_unique<ConvLayer>(std::move(bank), j.value("frozen", false));
    }
    if (type == "hydra_conv") {
        std::map<std::string, ConvFilterBank> pathways;
        for (const auto& s : j.at("selectors"))
            pathways.emplace(s.get<std::string>(),
                             ConvFilterBank(placeholder(j.at("filters"), j.at("width"), j.at("channels")),
                                            activation_from_string(j.at("activation")),
                                            j.value("stride", std::size_t{1})));
        HydraLayer h(pathways, hydra_strategy_from_string(j.value("strategy", std::string("per_instance"))));
        return std::make_unique<HydraConvLayer>(std::move(h), j.value("frozen", false));
    }
    if (type == "dropout") return std::make_unique<DropoutLayer>(j.at("rate").get<double>(), 0);
    if (type == "output")
        return std::make_unique<OutputLayer>(Tensor({j.at("inputs").get<std::size_t>(), j.at("classes").get<std::size_t>()}),
                                             Tensor({j.at("classes").get<std::size_t>()}));
    throw LoadError("unknown layer type '" + type + "'");
}

}  // namespace

Model load_model(const fs::path& dir) {
    const auto mpath = dir / "model.json", ppath = dir / "params.bin";
    if (!fs::exists(mpath)) throw LoadError("missing " + mpath.string());
    if (!fs::exists(ppath)) throw LoadError("missing " + ppath.string());
    Model model;
    try {
        std::ifstream in(mpath);
        const json spec = json::parse(in);
        for (const auto& l : spec.at("layers")) model.add(layer_from_json(l));
    } catch (const json::exception& e) {
        throw LoadError("malformed " + mpath.string() + ": " + e.what());
    }
    std::ifstream bin(ppath, std::ios::binary);
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    std::size_t off = 0;
    for (Parameter* p : model.parameters()) {
        if (off + p->value.size() * 4 > blob.size())
            throw LoadError(ppath.string() + " is too short for parameter '" + p->name + "'");
        for (auto& v : p->value.data()) {
            std::uint32_t u = 0;
            for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(blob[off + i]) << (8 * i);
            v = std::bit_cast<float>(u);
            off += 4;
        }
    }
    if (off != blob.size()) throw LoadError(ppath.string() + " has trailing bytes beyond the declared parameters");
    return model;
}

void save_bank(const fs::path& dir, const ConvFilterBank& bank) {
    Model m;
    m.add(std::make_unique<ConvLayer>(bank, false));
    save_model(dir, m);
}

ConvFilterBank load_bank(const fs::path& dir) {
    Model m = load_model(dir);
    if (m.size() == 0 || m.layer(0).kind() != "conv") throw LoadError(dir.string() + " does not hold a filter bank");
    return static_cast<const ConvLayer&>(m.layer(0)).bank();
}

void save_hydra(const fs::path& dir, const HydraLayer& layer) {
    Model m;
    m.add(std::make_unique<HydraConvLayer>(layer, false));
    save_model(dir, m);
}

HydraLayer load_hydra(const fs::path& dir) {
    Model m = load_model(dir);
    if (m.size() == 0 || m.layer(0).kind() != "hydra_conv")
        throw LoadError(dir.string() + " does not hold a hydra layer");
    return static_cast<const HydraConvLayer&>(m.layer(0)).hydra();
}

}  // namespace tuplenet
