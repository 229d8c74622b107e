#include "evlm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "evlm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace evlm {

namespace fs = std::filesystem;
using nlohmann::json;

void save_checkpoint(const fs::path& dir, const ParamStore& params, const std::string& config_json) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

    json manifest;
    manifest["version"] = 1;
    manifest["tensors"] = json::array();

    std::ofstream bin(dir / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open " + (dir / "params.bin").string() + " for writing");

    uint64_t offset = 0;
    for (const std::string& name : params.names()) {
        const Tensor& t = params.get(name);
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["dtype"] = "f32";
        entry["offset"] = offset;
        manifest["tensors"].push_back(entry);

        std::vector<float> f32(t.value().size());
        for (size_t i = 0; i < f32.size(); ++i) f32[i] = static_cast<float>(t.value()[i]);
        bin.write(reinterpret_cast<const char*>(f32.data()),
                  static_cast<std::streamsize>(f32.size() * sizeof(float)));
        offset += f32.size() * sizeof(float);
    }
    bin.close();
    if (!bin) throw IoError("write failed for " + (dir / "params.bin").string());

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string() + " for writing");
    mf << manifest.dump(2) << "\n";
    mf.close();
    if (!mf) throw IoError("write failed for " + (dir / "manifest.json").string());

    if (!config_json.empty()) {
        std::ofstream cf(dir / "config.json", std::ios::trunc);
        if (!cf) throw IoError("cannot open " + (dir / "config.json").string() + " for writing");
        cf << config_json;
        if (config_json.back() != '\n') cf << "\n";
    }
}

void load_checkpoint(const fs::path& dir, ParamStore& params) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    if (!manifest.contains("version") || manifest["version"] != 1) {
        throw FormatError("unsupported checkpoint manifest version in " + dir.string());
    }

    std::ifstream bin(dir / "params.bin", std::ios::binary);
    if (!bin) throw IoError("cannot open " + (dir / "params.bin").string());
    bin.seekg(0, std::ios::end);
    const uint64_t file_size = static_cast<uint64_t>(bin.tellg());

    const auto& tensors = manifest["tensors"];
    if (tensors.size() != params.size()) {
        throw FormatError("checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
                          std::to_string(params.size()));
    }
    size_t idx = 0;
    for (const auto& entry : tensors) {
        const std::string name = entry.at("name").get<std::string>();
        if (name != params.names()[idx]) {
            throw FormatError("checkpoint tensor order mismatch at index " + std::to_string(idx) +
                              ": got '" + name + "', expected '" + params.names()[idx] + "'");
        }
        Tensor& t = params.get(name);
        const Shape shape = entry.at("shape").get<Shape>();
        if (shape != t.shape()) {
            throw FormatError("shape mismatch for '" + name + "': checkpoint " + shape_str(shape) +
                              " vs model " + shape_str(t.shape()));
        }
        if (entry.at("dtype").get<std::string>() != "f32") {
            throw FormatError("unsupported dtype for '" + name + "'");
        }
        const uint64_t offset = entry.at("offset").get<uint64_t>();
        const uint64_t nbytes = t.value().size() * sizeof(float);
        if (offset + nbytes > file_size) {
            throw FormatError("params.bin truncated: '" + name + "' needs bytes [" +
                              std::to_string(offset) + ", " + std::to_string(offset + nbytes) +
                              ") but file has " + std::to_string(file_size));
        }
        std::vector<float> f32(t.value().size());
        bin.seekg(static_cast<std::streamoff>(offset));
        bin.read(reinterpret_cast<char*>(f32.data()), static_cast<std::streamsize>(nbytes));
        if (!bin) throw IoError("read failed for " + (dir / "params.bin").string());
        for (size_t i = 0; i < f32.size(); ++i) t.value()[i] = static_cast<double>(f32[i]);
        ++idx;
    }
}

std::string load_checkpoint_config(const fs::path& dir) {
    std::ifstream cf(dir / "config.json");
    if (!cf) return "";
    std::string s((std::istreambuf_iterator<char>(cf)), std::istreambuf_iterator<char>());
    return s;
}

} // namespace evlm
