#include "evlm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evlm/checkpoint.hpp"
#include "evlm/digest.hpp"
#include "evlm/errors.hpp"
#include "evlm/metrics.hpp"
#include "evlm/optimizer.hpp"
#include "evlm/rng.hpp"

namespace evlm {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// StageConfig

StageConfig StageConfig::defaults(int stage) {
    StageConfig c;
    c.stage = stage;
    switch (stage) {
        case 1:
            c.trainable = {"projector"};
            c.use_adapter = false;
            c.use_aggregator = false;
            c.learning_rate = 2e-4;
            break;
        case 2:
            c.trainable = {"adapter"};
            c.use_adapter = true;
            c.use_aggregator = true;
            c.learning_rate = 2e-4;
            break;
        case 3:
            c.trainable = {"encoder", "projector", "adapter", "lm"};
            c.use_adapter = true;
            c.use_aggregator = true;
            c.learning_rate = 2e-5;
            break;
        default:
            throw ConfigError("stage must be 1, 2 or 3, got " + std::to_string(stage));
    }
    return c;
}

void StageConfig::validate() const {
    if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
    if (learning_rate <= 0.0) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (max_steps < 0) throw ConfigError("max steps must be >= 0");
    if (lr_schedule != "constant" && lr_schedule != "cosine") {
        throw ConfigError("lr_schedule must be 'constant' or 'cosine'");
    }
    if (!allow_custom_freeze) {
        const std::set<std::string> got(trainable.begin(), trainable.end());
        std::set<std::string> want;
        for (const std::string& p : StageConfig::defaults(stage).trainable) want.insert(p);
        if (got != want) {
            throw ConfigError("stage " + std::to_string(stage) +
                              " has a fixed trainable set; pass allow_custom_freeze to override");
        }
    }
}

std::string StageConfig::to_json() const {
    ordered_json j;
    j["stage"] = stage;
    j["manifest"] = manifest;
    j["learning_rate"] = learning_rate;
    j["batch_size"] = batch_size;
    j["max_steps"] = max_steps;
    j["seed"] = seed;
    j["trainable"] = trainable;
    j["use_adapter"] = use_adapter;
    j["use_aggregator"] = use_aggregator;
    j["allow_custom_freeze"] = allow_custom_freeze;
    j["weight_decay"] = weight_decay;
    j["clip_norm"] = clip_norm;
    j["lr_schedule"] = lr_schedule;
    return j.dump(2);
}

StageConfig StageConfig::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::exception& e) {
        throw FormatError(std::string("malformed stage config: ") + e.what());
    }
    if (!j.contains("stage")) throw ConfigError("stage config needs a 'stage' field");
    StageConfig c = StageConfig::defaults(j.at("stage").get<int>());
    c.manifest = j.value("manifest", c.manifest);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("trainable")) c.trainable = j.at("trainable").get<std::vector<std::string>>();
    c.use_adapter = j.value("use_adapter", c.use_adapter);
    c.use_aggregator = j.value("use_aggregator", c.use_aggregator);
    c.allow_custom_freeze = j.value("allow_custom_freeze", c.allow_custom_freeze);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.lr_schedule = j.value("lr_schedule", c.lr_schedule);
    c.validate();
    return c;
}

std::string TrainReport::to_json() const {
    ordered_json j;
    j["stage"] = stage;
    j["steps"] = losses.size();
    j["final_loss"] = final_loss;
    j["wall_seconds"] = wall_seconds;
    j["losses"] = losses;
    j["digests_before"] = digests_before;
    j["digests_after"] = digests_after;
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// Freeze mask

std::vector<uint8_t> build_freeze_mask(const StageConfig& cfg, const ParamStore& params) {
    for (const std::string& prefix : cfg.trainable) {
        bool known = false;
        for (const std::string& p : module_prefixes()) {
            if (prefix == p) known = true;
        }
        if (!known || params.names_with_prefix(prefix + ".").empty()) {
            std::string valid;
            for (const std::string& p : module_prefixes()) valid += (valid.empty() ? "" : ", ") + p;
            throw ConfigError("unknown trainable prefix '" + prefix + "'; valid prefixes: " + valid);
        }
    }
    std::vector<uint8_t> mask(params.size(), 0);
    for (size_t i = 0; i < params.names().size(); ++i) {
        for (const std::string& prefix : cfg.trainable) {
            if (params.names()[i].rfind(prefix + ".", 0) == 0) {
                mask[i] = 1;
                break;
            }
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// DatasetCache

DatasetCache::DatasetCache(const fs::path& manifest, const ModelConfig& cfg)
    : base_(manifest.parent_path()), cfg_(cfg), records_(load_manifest(manifest)) {
    if (records_.empty()) throw ConfigError("empty manifest: " + manifest.string());
    event_grids_.resize(records_.size());
    frame_grids_.resize(records_.size());
}

const VoxelGrid& DatasetCache::event_grid(size_t i) {
    if (!event_grids_[i]) {
        const DatasetRecord& rec = records_[i];
        const EventStream stream = read_stream(base_ / rec.events_path);
        event_grids_[i] = bin_events(stream, 0, rec.meta.scene.duration_us, cfg_.num_bins);
    }
    return *event_grids_[i];
}

const VoxelGrid& DatasetCache::frame_grid(size_t i) {
    if (!frame_grids_[i]) {
        const SceneSpec& scene = records_[i].meta.scene;
        const std::vector<double> frame = render_intensity(scene, scene.duration_us / 2);
        frame_grids_[i] = frame_as_grid(frame, scene.height, scene.width);
    }
    return *frame_grids_[i];
}

// ---------------------------------------------------------------------------
// Loss

namespace {

Tensor record_loss(DatasetCache& data, size_t index, const ParamStore& params,
                   const StageConfig& stage, const ModelConfig& cfg) {
    const DatasetRecord& rec = data.record(index);

    Tensor prefix;
    std::string prompt, answer;
    if (stage.stage == 1) {
        // Image warm-up: intensity frame, caption text, raw encoder tokens.
        prefix = event_prefix(data.frame_grid(index), params, cfg, stage.use_adapter,
                              stage.use_aggregator);
        const std::vector<Turn> turns = make_text(rec.meta, "caption");
        prompt = turns.at(0).text;
        answer = turns.at(1).text;
    } else {
        prefix = event_prefix(data.event_grid(index), params, cfg, stage.use_adapter,
                              stage.use_aggregator);
        prompt = rec.conversations.at(0).text;
        answer = rec.conversations.at(1).text;
    }

    AssembledSequence seq = assemble_sequence(prefix, tokenize(prompt), tokenize(answer),
                                              /*include_answer=*/true, params, cfg);
    Tensor logits = forward_logits(seq.embedded, params, cfg);
    const int len = logits.dim(0);
    // Position t-1 predicts token t.
    Tensor shifted = slice(logits, 0, 0, len - 1);
    std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
    std::vector<uint8_t> mask(seq.supervised.begin() + 1, seq.supervised.end());
    return cross_entropy_with_logits(shifted, targets, mask);
}

} // namespace

Tensor loss_on_batch(DatasetCache& data, const std::vector<size_t>& indices,
                     const ParamStore& params, const StageConfig& stage, const ModelConfig& cfg) {
    if (indices.empty()) throw NumericError("loss_on_batch on an empty batch");
    Tensor total;
    for (size_t idx : indices) {
        Tensor l = record_loss(data, idx, params, stage, cfg);
        total = total.defined() ? add(total, l) : l;
    }
    return scale(total, 1.0 / static_cast<double>(indices.size()));
}

// ---------------------------------------------------------------------------
// train_stage

TrainReport train_stage(const StageConfig& cfg, ParamStore& params, const ModelConfig& model_cfg,
                        const fs::path& out_dir) {
    cfg.validate();
    const auto wall_start = std::chrono::steady_clock::now();

    DatasetCache data(cfg.manifest, model_cfg);
    const std::vector<uint8_t> mask = build_freeze_mask(cfg, params);
    params.set_trainable(mask);

    std::vector<std::string> trainable_names;
    std::vector<std::string> frozen_names;
    for (size_t i = 0; i < params.size(); ++i) {
        (mask[i] ? trainable_names : frozen_names).push_back(params.names()[i]);
    }

    TrainReport report;
    report.stage = cfg.stage;
    report.digests_before = module_digests(params);
    std::map<std::string, std::string> frozen_before;
    for (const std::string& name : frozen_names) {
        frozen_before[name] = param_digest(params.get(name).value());
    }

    AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(opt_cfg);

    Rng batch_rng(mix_seed(cfg.seed, static_cast<uint64_t>(cfg.stage)));
    for (int step = 0; step < cfg.max_steps; ++step) {
        std::vector<size_t> indices(static_cast<size_t>(cfg.batch_size));
        for (size_t& idx : indices) idx = batch_rng.below(data.size());

        params.zero_grads();
        double loss_value = 0.0;
        {
            Tape tape;
            Tensor loss = loss_on_batch(data, indices, params, cfg, model_cfg);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                const fs::path rescue = out_dir / ("stage" + std::to_string(cfg.stage) + "_last_good");
                save_checkpoint(rescue, params, model_cfg.to_json());
                throw NumericError("non-finite loss at step " + std::to_string(step) +
                                   "; last good state saved to " + rescue.string());
            }
            tape.backward(loss);
        }
        AdamW::clip_global_norm(params, trainable_names, cfg.clip_norm);
        if (cfg.lr_schedule == "cosine") {
            const double t = static_cast<double>(step) / std::max(1, cfg.max_steps);
            opt.set_lr(cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * t)));
        }
        opt.step(params, trainable_names);
        report.losses.push_back(loss_value);
    }

    report.digests_after = module_digests(params);
    for (const std::string& name : frozen_names) {
        if (param_digest(params.get(name).value()) != frozen_before[name]) {
            throw NumericError("frozen parameter '" + name + "' changed during stage " +
                               std::to_string(cfg.stage));
        }
    }
    report.final_loss = report.losses.empty() ? 0.0 : report.losses.back();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return report;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << text;
    if (!text.empty() && text.back() != '\n') f << "\n";
    if (!f) throw IoError("write failed for " + path.string());
}

PipelineResult run_stages(const std::vector<StageConfig>& stages, ParamStore& params,
                          const ModelConfig& model_cfg, const fs::path& out_dir) {
    PipelineResult result;
    for (const StageConfig& stage : stages) {
        stage.validate();
        TrainReport report;
        try {
            report = train_stage(stage, params, model_cfg, out_dir);
        } catch (const Error& e) {
            throw NumericError("stage " + std::to_string(stage.stage) + " failed: " + e.what());
        }
        const fs::path ckpt = out_dir / ("stage" + std::to_string(stage.stage));
        save_checkpoint(ckpt, params, model_cfg.to_json());
        write_text(ckpt / "report.json", report.to_json());
        // Continue from the written float32 state so resuming from this
        // checkpoint reproduces the remaining stages exactly.
        load_checkpoint(ckpt, params);
        result.reports.push_back(std::move(report));
        result.final_checkpoint = ckpt;
    }
    return result;
}

} // namespace

PipelineResult run_pipeline(const std::vector<StageConfig>& stages, const ModelConfig& model_cfg,
                            const fs::path& out_dir) {
    if (stages.empty()) throw ConfigError("pipeline needs at least one stage");
    for (size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].stage != static_cast<int>(i) + 1) {
            throw ConfigError("pipeline stages must be ordered 1, 2, 3");
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    ParamStore params = build_params(model_cfg);
    save_checkpoint(out_dir / "init", params, model_cfg.to_json());
    return run_stages(stages, params, model_cfg, out_dir);
}

PipelineResult resume_pipeline(const std::vector<StageConfig>& stages, const fs::path& checkpoint,
                               const fs::path& out_dir) {
    const std::string cfg_json = load_checkpoint_config(checkpoint);
    if (cfg_json.empty()) throw ConfigError("checkpoint " + checkpoint.string() + " has no config.json");
    const ModelConfig model_cfg = ModelConfig::from_json(cfg_json);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    ParamStore params = build_params(model_cfg);
    load_checkpoint(checkpoint, params);
    return run_stages(stages, params, model_cfg, out_dir);
}

// ---------------------------------------------------------------------------
// N_w sweep

std::string SweepResult::to_json() const {
    ordered_json j;
    j["rows"] = ordered_json::array();
    for (const SweepCell& c : cells) {
        ordered_json row;
        row["num_bins"] = c.num_bins;
        row["status"] = c.status;
        row["config_sha256"] = c.config_digest;
        row["metrics"] = c.metrics;
        j["rows"].push_back(row);
    }
    return j.dump(2);
}

std::string SweepResult::to_table() const {
    // Column set: union of metric keys, in sorted order.
    std::set<std::string> keys;
    for (const SweepCell& c : cells) {
        for (const auto& [k, v] : c.metrics) keys.insert(k);
    }
    std::ostringstream os;
    os << "N_w  status ";
    for (const std::string& k : keys) os << " " << k;
    os << "\n";
    for (const SweepCell& c : cells) {
        os << c.num_bins << "    " << c.status;
        for (const std::string& k : keys) {
            auto it = c.metrics.find(k);
            os << " ";
            if (it == c.metrics.end()) {
                os << "-";
            } else {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.4f", it->second);
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

SweepResult sweep_nw(const std::vector<int>& values, const std::vector<StageConfig>& stages,
                     const ModelConfig& model_cfg, const fs::path& test_manifest,
                     const fs::path& out_dir) {
    for (int v : values) {
        if (v < 1) throw ConfigError("N_w values must be >= 1");
    }
    SweepResult result;
    for (int v : values) {
        SweepCell cell;
        cell.num_bins = v;
        ModelConfig cfg = model_cfg;
        cfg.num_bins = v;
        cell.config_digest = sha256_hex(cfg.to_json());
        const fs::path cell_dir = out_dir / ("nw" + std::to_string(v));
        try {
            PipelineResult run = run_pipeline(stages, cfg, cell_dir);
            ParamStore params = build_params(cfg);
            load_checkpoint(run.final_checkpoint, params);
            const MetricReport report = evaluate_manifest(test_manifest, params, cfg);
            for (const auto& [task, m] : report.tasks) {
                cell.metrics[task + ".em"] = m.exact_match;
                cell.metrics[task + ".ppl"] = m.perplexity;
            }
            cell.status = "ok";
        } catch (const Error& e) {
            cell.status = std::string("failed: ") + e.what();
        }
        result.cells.push_back(std::move(cell));
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!ec) write_text(out_dir / "sweep.json", result.to_json());
    return result;
}

} // namespace evlm
