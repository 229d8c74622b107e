#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "evlm/checkpoint.hpp"
#include "evlm/errors.hpp"
#include "evlm/rng.hpp"

using namespace evlm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("evlm_ckpt_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ParamStore random_store(Rng& rng, int tensors) {
    ParamStore p;
    for (int i = 0; i < tensors; ++i) {
        const int rows = 1 + static_cast<int>(rng.below(6));
        const int cols = 1 + static_cast<int>(rng.below(6));
        std::vector<double> v(static_cast<size_t>(rows) * cols);
        for (double& x : v) x = rng.uniform(-3.0, 3.0);
        p.add("module" + std::to_string(i % 3) + ".t" + std::to_string(i),
              Tensor({rows, cols}, std::move(v)));
    }
    return p;
}

std::string file_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

ParamStore like(const ParamStore& ref) {
    ParamStore p;
    for (const std::string& name : ref.names()) p.add(name, Tensor::zeros(ref.get(name).shape()));
    return p;
}

} // namespace

TEST_CASE("write -> read -> write reproduces the container byte for byte") {
    Rng rng(5);
    for (int trial = 0; trial < 25; ++trial) {
        ParamStore original = random_store(rng, 1 + static_cast<int>(rng.below(8)));
        const fs::path dir_a = temp_dir("a");
        const fs::path dir_b = temp_dir("b");

        save_checkpoint(dir_a, original, "{\"trial\": " + std::to_string(trial) + "}");
        ParamStore loaded = like(original);
        load_checkpoint(dir_a, loaded);
        save_checkpoint(dir_b, loaded);

        CHECK(file_bytes(dir_a / "params.bin") == file_bytes(dir_b / "params.bin"));
        CHECK(file_bytes(dir_a / "manifest.json") == file_bytes(dir_b / "manifest.json"));
    }
}

TEST_CASE("loaded values equal the float32 narrowing of the originals") {
    Rng rng(6);
    ParamStore original = random_store(rng, 4);
    const fs::path dir = temp_dir("narrow");
    save_checkpoint(dir, original);
    ParamStore loaded = like(original);
    load_checkpoint(dir, loaded);
    for (const std::string& name : original.names()) {
        const auto& a = original.get(name).value();
        const auto& b = loaded.get(name).value();
        for (size_t i = 0; i < a.size(); ++i) {
            CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
        }
    }
}

TEST_CASE("config blob round-trips") {
    Rng rng(7);
    ParamStore p = random_store(rng, 2);
    const fs::path dir = temp_dir("cfg");
    save_checkpoint(dir, p, "{\"k\": 1}");
    CHECK(load_checkpoint_config(dir) == "{\"k\": 1}\n");
}

TEST_CASE("shape mismatch, missing tensors and truncation are format errors") {
    Rng rng(8);
    ParamStore p = random_store(rng, 3);
    const fs::path dir = temp_dir("bad");
    save_checkpoint(dir, p);

    ParamStore wrong_shape;
    for (const std::string& name : p.names()) wrong_shape.add(name, Tensor::zeros({1, 1}));
    CHECK_THROWS_AS(load_checkpoint(dir, wrong_shape), FormatError);

    ParamStore missing;
    missing.add(p.names()[0], Tensor::zeros(p.get(p.names()[0]).shape()));
    CHECK_THROWS_AS(load_checkpoint(dir, missing), FormatError);

    // Truncate the payload.
    fs::resize_file(dir / "params.bin", 2);
    ParamStore ok = like(p);
    CHECK_THROWS_AS(load_checkpoint(dir, ok), FormatError);
}
