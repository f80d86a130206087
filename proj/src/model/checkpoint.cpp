#include "hlab/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace hlab::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError(std::string("truncated checkpoint: ") + what);
    return v;
}

struct Opened {
    std::ifstream in;
    CheckpointHeader header;
    std::uint64_t data_start = 0;
};

Opened open_checkpoint(const std::filesystem::path& path) {
    Opened o;
    o.in.open(path, std::ios::binary);
    if (!o.in) throw LoadError("cannot open checkpoint " + path.string());
    char magic[8];
    if (!o.in.read(magic, 8)) throw LoadError("truncated checkpoint: magic");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw LoadError("not a checkpoint file: bad magic");
    o.header.version = read_pod<std::uint32_t>(o.in, "version");
    if (o.header.version != kCheckpointVersion)
        throw LoadError("checkpoint version mismatch: file has " + std::to_string(o.header.version) + ", expected " +
                        std::to_string(kCheckpointVersion));
    const auto header_len = read_pod<std::uint64_t>(o.in, "header length");
    std::string text(header_len, '\0');
    if (!o.in.read(text.data(), static_cast<std::streamsize>(header_len)))
        throw LoadError("truncated checkpoint: manifest header shorter than declared");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    if (!j.contains("config") || !j.contains("arrays") || !j["arrays"].is_array())
        throw LoadError("checkpoint manifest lacks config or arrays");
    try {
        o.header.config = model_config_from_json(j["config"]);
    } catch (const ConfigError& e) {
        throw LoadError(std::string("checkpoint config: ") + e.what());
    }
    o.header.manifest = j["arrays"];
    o.header.meta = j.value("meta", nlohmann::json());
    o.data_start = 8 + 4 + 8 + header_len;
    return o;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path, const nlohmann::json& meta) {
    auto params = model.named_parameters();
    nlohmann::json arrays = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (auto& [name, t] : params) {
        arrays.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    }
    nlohmann::json header = {{"format_version", kCheckpointVersion},
                             {"config", to_json(model.config())},
                             {"arrays", arrays},
                             {"meta", meta}};
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error("cannot write checkpoint " + tmp.string());
        os.write(kCheckpointMagic, 8);
        write_pod<std::uint32_t>(os, kCheckpointVersion);
        write_pod<std::uint64_t>(os, text.size());
        os.write(text.data(), static_cast<std::streamsize>(text.size()));
        std::vector<float> buf;
        for (auto& [name, t] : params) {
            buf.assign(t.data().begin(), t.data().end());
            os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        }
        if (!os) throw Error("failed writing checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) { return open_checkpoint(path).header; }

Model load_checkpoint(const std::filesystem::path& path) {
    auto o = open_checkpoint(path);
    Model model(o.header.config, 0);

    std::map<std::string, const nlohmann::json*> entries;
    for (const auto& e : o.header.manifest) {
        const auto name = e.value("name", std::string());
        if (!entries.emplace(name, &e).second) throw LoadError("array '" + name + "' listed twice in manifest");
    }
    auto params = model.named_parameters();
    if (entries.size() != params.size())
        throw LoadError("manifest lists " + std::to_string(entries.size()) + " arrays, model expects " +
                        std::to_string(params.size()));

    const auto file_size = std::filesystem::file_size(path);
    std::vector<float> buf;
    for (auto& [name, t] : params) {
        auto it = entries.find(name);
        if (it == entries.end()) throw LoadError("missing array '" + name + "'");
        const auto& e = *it->second;
        if (e.value("dtype", std::string()) != "f32") throw LoadError("array '" + name + "' has unsupported dtype");
        if (e.at("shape").get<Shape>() != t.shape())
            throw LoadError("size mismatch for array '" + name + "': manifest " +
                            shape_str(e.at("shape").get<Shape>()) + ", model " + shape_str(t.shape()));
        const auto offset = e.at("offset").get<std::uint64_t>();
        const std::uint64_t bytes = t.size() * sizeof(float);
        if (o.data_start + offset + bytes > file_size) throw LoadError("truncated data for array '" + name + "'");
        o.in.seekg(static_cast<std::streamoff>(o.data_start + offset));
        buf.resize(t.size());
        if (!o.in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes)))
            throw LoadError("truncated data for array '" + name + "'");
        auto dst = t.mutable_data();
        std::copy(buf.begin(), buf.end(), dst.begin());
    }
    return model;
}

}  // namespace hlab::model
