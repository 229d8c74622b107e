#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evlm/dataset.hpp"
#include "evlm/model.hpp"

namespace evlm {

// One training stage. The canonical freeze schedule is enforced unless
// allow_custom_freeze is set: stage 1 trains the projector only, stage 2
// the adapter only, stage 3 everything.
struct StageConfig {
    int stage = 1;
    std::string manifest;
    double learning_rate = 2e-4;
    int batch_size = 8;
    int max_steps = 100;
    uint64_t seed = 0;
    std::vector<std::string> trainable; // parameter-name prefixes
    bool use_adapter = false;
    bool use_aggregator = false;
    bool allow_custom_freeze = false;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
    std::string lr_schedule = "constant"; // constant | cosine

    /// Stage defaults: lr 2e-4 / 2e-4 / 2e-5, canonical freeze sets,
    /// adapter and aggregator off in stage 1 and on afterwards.
    static StageConfig defaults(int stage);
    void validate() const;

    std::string to_json() const;
    static StageConfig from_json(const std::string& text);
};

struct TrainReport {
    int stage = 0;
    std::vector<double> losses;
    double final_loss = 0.0;
    double wall_seconds = 0.0;
    std::map<std::string, std::string> digests_before; // per top-level module
    std::map<std::string, std::string> digests_after;

    std::string to_json() const;
};

/// True exactly where a parameter name starts with a trainable prefix;
/// aligned with params.names(). Unknown prefixes raise ConfigError.
std::vector<uint8_t> build_freeze_mask(const StageConfig& cfg, const ParamStore& params);

// Loads a manifest once and caches per-record voxel grids / stage-1
// frames / token ids across training steps.
class DatasetCache {
public:
    DatasetCache(const std::filesystem::path& manifest, const ModelConfig& cfg);

    size_t size() const { return records_.size(); }
    const DatasetRecord& record(size_t i) const { return records_[i]; }
    const VoxelGrid& event_grid(size_t i);  // binned over [0, duration], raw counts
    const VoxelGrid& frame_grid(size_t i);  // mid-scene intensity frame, single bin

private:
    std::filesystem::path base_;
    ModelConfig cfg_;
    std::vector<DatasetRecord> records_;
    std::vector<std::optional<VoxelGrid>> event_grids_;
    std::vector<std::optional<VoxelGrid>> frame_grids_;
};

/// Mean masked cross-entropy over the batch. Stage 1 runs the image path
/// (caption text, no adapter or aggregator); stages 2-3 run the event
/// path with the record's own conversation.
Tensor loss_on_batch(DatasetCache& data, const std::vector<size_t>& indices,
                     const ParamStore& params, const StageConfig& stage, const ModelConfig& cfg);

/// Runs max_steps of AdamW on the stage's trainable parameters. Frozen
/// parameters are digest-verified unchanged. On a non-finite loss the
/// last good state is checkpointed under out_dir and NumericError thrown.
TrainReport train_stage(const StageConfig& cfg, ParamStore& params, const ModelConfig& model_cfg,
                        const std::filesystem::path& out_dir);

struct PipelineResult {
    std::filesystem::path final_checkpoint;
    std::vector<TrainReport> reports;
};

/// Chains stages 1-3 from a fresh initialization, checkpointing after
/// each stage and reloading from the written checkpoint so a later
/// resume reproduces the same trajectory bit for bit.
PipelineResult run_pipeline(const std::vector<StageConfig>& stages, const ModelConfig& model_cfg,
                            const std::filesystem::path& out_dir);

/// Stage 2-3 continuation from an existing checkpoint directory.
PipelineResult resume_pipeline(const std::vector<StageConfig>& stages,
                               const std::filesystem::path& checkpoint,
                               const std::filesystem::path& out_dir);

struct SweepCell {
    int num_bins = 0;
    std::string status; // "ok" or the error message
    std::string config_digest;
    std::map<std::string, double> metrics; // task -> exact match (+ ppl keys)
};

struct SweepResult {
    std::vector<SweepCell> cells;
    std::string to_json() const;
    std::string to_table() const; // aligned text table
};

/// Full pipeline + test-set evaluation per temporal window count.
/// Per-cell failures are recorded and the sweep continues.
SweepResult sweep_nw(const std::vector<int>& values, const std::vector<StageConfig>& stages,
                     const ModelConfig& model_cfg, const std::filesystem::path& test_manifest,
                     const std::filesystem::path& out_dir);

} // namespace evlm
