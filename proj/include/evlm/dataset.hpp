#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "evlm/simulator.hpp"

namespace evlm {

// One manifest line: event file, conversation, task and scene labels.
struct DatasetRecord {
    std::string id;
    std::string events_path; // relative to the manifest's directory
    std::string task;        // caption | vqa | reasoning
    std::vector<Turn> conversations;
    GroundTruth meta;
};

std::string record_to_json_line(const DatasetRecord& rec);
DatasetRecord record_from_json_line(const std::string& line);

/// Reads a JSON Lines manifest; paths stay relative to the manifest dir.
std::vector<DatasetRecord> load_manifest(const std::filesystem::path& path);

/// Decodes every referenced event file and checks it against its meta's
/// resolution; returns the number of validated records.
size_t validate_manifest(const std::filesystem::path& path);

struct GeneratorConfig {
    size_t count = 100;
    uint64_t seed = 0;
    double train_ratio = 0.7;
    double val_ratio = 0.1;
    double test_ratio = 0.2;
    int resolution = 64;
    uint64_t min_duration_us = 220000;
    uint64_t max_duration_us = 300000;
    double render_rate_hz = 2000.0;
    double noise_rate_hz = 0.0;
};

struct GeneratedDataset {
    std::filesystem::path train_manifest;
    std::filesystem::path val_manifest;
    std::filesystem::path test_manifest;
    size_t train_count = 0;
    size_t val_count = 0;
    size_t test_count = 0;
};

/// Samples `count` scenes from the seed, simulates and writes their event
/// files under out_dir/events/, and emits train/val/test JSONL manifests
/// with disjoint id ranges. Fully deterministic per (seed, config).
GeneratedDataset generate_dataset(const GeneratorConfig& cfg, const std::filesystem::path& out_dir);

} // namespace evlm
