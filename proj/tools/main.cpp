// Command-line entry point: data simulation, staged training, chat,
// evaluation, frame rendering and gradient self-checks.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "evlm/checkpoint.hpp"
#include "evlm/dataset.hpp"
#include "evlm/digest.hpp"
#include "evlm/errors.hpp"
#include "evlm/gradcheck.hpp"
#include "evlm/judge.hpp"
#include "evlm/metrics.hpp"
#include "evlm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

// Exit codes per error class.
constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitNumeric = 5;
constexpr int kExitJudge = 6;

struct PipelineFile {
    evlm::ModelConfig model;
    std::string train_manifest;
    std::string test_manifest;
    std::vector<evlm::StageConfig> stages;
};

void reject_unknown_keys(const ordered_json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const std::string& k : allowed) {
            if (key == k) ok = true;
        }
        if (!ok) throw evlm::ConfigError("unknown key '" + key + "' in " + where);
    }
}

// Schema: docs/pipeline.schema.json. Validates before any work happens.
PipelineFile load_pipeline_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw evlm::IoError("cannot open config " + path.string());
    ordered_json j;
    try {
        f >> j;
    } catch (const ordered_json::exception& e) {
        throw evlm::FormatError("malformed config " + path.string() + ": " + e.what());
    }
    reject_unknown_keys(j, {"version", "model", "data", "stages"}, path.string());
    if (!j.contains("version") || !j["version"].is_number_integer() || j["version"] != 1) {
        throw evlm::ConfigError(path.string() + ": 'version' must be the integer 1");
    }
    if (!j.contains("data") || !j["data"].is_object()) {
        throw evlm::ConfigError(path.string() + ": missing 'data' object");
    }
    reject_unknown_keys(j["data"], {"train", "test"}, "data");
    if (!j["data"].contains("train")) {
        throw evlm::ConfigError(path.string() + ": data.train manifest is required");
    }

    PipelineFile out;
    out.model = evlm::ModelConfig::from_json(j.contains("model") ? j["model"].dump() : "{}");
    out.train_manifest = j["data"]["train"].get<std::string>();
    out.test_manifest = j["data"].value("test", std::string());

    // Manifests are resolved relative to the config file.
    const fs::path base = path.parent_path();
    out.train_manifest = (base / out.train_manifest).string();
    if (!out.test_manifest.empty()) out.test_manifest = (base / out.test_manifest).string();

    for (int stage = 1; stage <= 3; ++stage) {
        evlm::StageConfig sc = evlm::StageConfig::defaults(stage);
        sc.manifest = out.train_manifest;
        if (j.contains("stages")) {
            for (const auto& sj : j["stages"]) {
                if (sj.value("stage", 0) == stage) {
                    sc = evlm::StageConfig::from_json(sj.dump());
                    if (sc.manifest.empty()) {
                        sc.manifest = out.train_manifest;
                    } else {
                        sc.manifest = (base / sc.manifest).string();
                    }
                }
            }
        }
        sc.validate();
        out.stages.push_back(sc);
    }
    return out;
}

evlm::ParamStore load_model(const fs::path& checkpoint, evlm::ModelConfig& cfg_out) {
    const std::string cfg_json = evlm::load_checkpoint_config(checkpoint);
    if (cfg_json.empty()) {
        throw evlm::ConfigError("checkpoint " + checkpoint.string() + " has no config.json");
    }
    cfg_out = evlm::ModelConfig::from_json(cfg_json);
    evlm::ParamStore params = evlm::build_params(cfg_out);
    evlm::load_checkpoint(checkpoint, params);
    return params;
}

int cmd_simulate(size_t n, uint64_t seed, const std::string& out, int resolution, double noise,
                 bool validate) {
    evlm::GeneratorConfig cfg;
    cfg.count = n;
    cfg.seed = seed;
    cfg.resolution = resolution;
    cfg.noise_rate_hz = noise;
    const evlm::GeneratedDataset ds = evlm::generate_dataset(cfg, out);
    std::cout << "wrote " << ds.train_count << " train / " << ds.val_count << " val / "
              << ds.test_count << " test records under " << out << "\n";
    if (validate) {
        size_t total = 0;
        for (const fs::path& m : {ds.train_manifest, ds.val_manifest, ds.test_manifest}) {
            total += evlm::validate_manifest(m);
        }
        std::cout << "validated " << total << " records\n";
    }
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out, int stage, bool pipeline,
              const std::string& checkpoint, int64_t seed_override) {
    PipelineFile cfg = load_pipeline_config(config_path);
    if (seed_override >= 0) {
        cfg.model.init_seed = static_cast<uint64_t>(seed_override);
        for (evlm::StageConfig& sc : cfg.stages) sc.seed = static_cast<uint64_t>(seed_override);
    }

    if (pipeline) {
        const evlm::PipelineResult result = evlm::run_pipeline(cfg.stages, cfg.model, out);
        std::cout << "pipeline finished; final checkpoint: " << result.final_checkpoint.string()
                  << "\n";
        for (const evlm::TrainReport& r : result.reports) {
            std::cout << "  stage " << r.stage << ": " << r.losses.size() << " steps, final loss "
                      << r.final_loss << "\n";
        }
        return kExitOk;
    }

    if (stage < 1 || stage > 3) {
        throw evlm::ConfigError("pass --pipeline or --stage 1|2|3");
    }
    evlm::ParamStore params = checkpoint.empty() ? evlm::build_params(cfg.model)
                                                 : evlm::ParamStore();
    if (!checkpoint.empty()) {
        evlm::ModelConfig ck_cfg;
        params = load_model(checkpoint, ck_cfg);
        cfg.model = ck_cfg;
    }
    const evlm::StageConfig& sc = cfg.stages[static_cast<size_t>(stage - 1)];
    const evlm::TrainReport report = evlm::train_stage(sc, params, cfg.model, out);
    const fs::path ckpt = fs::path(out) / ("stage" + std::to_string(stage));
    evlm::save_checkpoint(ckpt, params, cfg.model.to_json());
    std::ofstream rf(ckpt / "report.json");
    rf << report.to_json() << "\n";
    std::cout << "stage " << stage << " finished; checkpoint: " << ckpt.string() << ", final loss "
              << report.final_loss << "\n";
    return kExitOk;
}

int cmd_chat(const std::string& checkpoint, const std::string& events_path, double temperature,
             uint64_t seed, int max_new) {
    evlm::ModelConfig cfg;
    const evlm::ParamStore params = load_model(checkpoint, cfg);
    const evlm::EventStream stream = evlm::read_stream(events_path);

    uint64_t t1 = stream.empty() ? 1 : stream.events().back().t + 1;
    const evlm::VoxelGrid grid = evlm::bin_events(stream, 0, t1, cfg.num_bins);
    const evlm::Tensor prefix =
        evlm::event_prefix(grid, params, cfg, /*use_adapter=*/true, /*use_aggregator=*/true);

    // Surface the token budget and per-bin occupancy up front.
    std::cout << "event prefix: " << prefix.dim(0) << " tokens (" << cfg.num_bins << " bins + "
              << cfg.tokens_per_bin() << " patches)\n";
    std::cout << "bin occupancy:";
    const int64_t per_bin = 2LL * grid.height * grid.width;
    for (int b = 0; b < grid.num_bins; ++b) {
        double count = 0.0;
        for (int64_t i = 0; i < per_bin; ++i) {
            count += grid.data.value()[static_cast<size_t>(b * per_bin + i)];
        }
        std::cout << " " << static_cast<int64_t>(count);
    }
    std::cout << " events\n";

    evlm::GenerateOptions gen;
    gen.temperature = temperature;
    gen.seed = seed;
    gen.max_new_tokens = max_new;

    std::string line;
    std::cout << "> " << std::flush;
    while (std::getline(std::cin, line)) {
        if (line == "/quit" || line == "/exit") break;
        if (!line.empty()) {
            const std::string answer = evlm::generate(prefix, line, params, cfg, gen);
            std::cout << answer << "\n";
        }
        std::cout << "> " << std::flush;
    }
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& out,
             bool judge, const std::string& judge_template, size_t limit) {
    evlm::ModelConfig cfg;
    const evlm::ParamStore params = load_model(checkpoint, cfg);
    evlm::EvalOptions opt;
    opt.limit = limit;
    const evlm::MetricReport report = evlm::evaluate_manifest(manifest, params, cfg, opt);

    ordered_json out_json = ordered_json::parse(report.to_json());
    if (judge) {
        const evlm::JudgeConfig jcfg = evlm::JudgeConfig::from_env(judge_template);
        const std::vector<evlm::DatasetRecord> records = evlm::load_manifest(manifest);
        std::vector<evlm::JudgeItem> items;
        const fs::path base = fs::path(manifest).parent_path();
        size_t n = records.size();
        if (limit > 0 && limit < n) n = limit;
        for (size_t i = 0; i < n; ++i) {
            const evlm::DatasetRecord& rec = records[i];
            const evlm::EventStream stream = evlm::read_stream(base / rec.events_path);
            const evlm::VoxelGrid grid =
                evlm::bin_events(stream, 0, rec.meta.scene.duration_us, cfg.num_bins);
            const evlm::Tensor prefix = evlm::event_prefix(grid, params, cfg, true, true);
            evlm::GenerateOptions gen;
            items.push_back({rec.conversations.at(0).text, rec.conversations.at(1).text,
                             evlm::generate(prefix, rec.conversations.at(0).text, params, cfg, gen)});
        }
        const std::vector<int> scores = evlm::judge_batch(jcfg, items);
        double mean = 0.0;
        for (int s : scores) mean += s;
        out_json["judge"] = {{"template", judge_template},
                             {"mean_score", scores.empty() ? 0.0 : mean / scores.size()},
                             {"n", scores.size()}};
    }

    if (out.empty()) {
        std::cout << out_json.dump(2) << "\n";
    } else {
        std::ofstream f(out);
        if (!f) throw evlm::IoError("cannot open " + out + " for writing");
        f << out_json.dump(2) << "\n";
        std::cout << "report written to " << out << "\n";
    }
    return kExitOk;
}

int cmd_render(const std::string& events_path, uint64_t t0, uint64_t t1, const std::string& out) {
    const evlm::EventStream stream = evlm::read_stream(events_path);
    if (t1 == 0 && !stream.empty()) t1 = stream.events().back().t + 1;
    if (t1 == 0) t1 = 1;
    const std::vector<uint8_t> img = evlm::render_frame(stream, t0, t1);
    evlm::write_pgm(out, img, stream.width(), stream.height());
    std::cout << "wrote " << out << " (" << stream.width() << "x" << stream.height() << ")\n";
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& values_csv, const std::string& out) {
    PipelineFile cfg = load_pipeline_config(config_path);
    if (cfg.test_manifest.empty()) {
        throw evlm::ConfigError("sweep needs data.test in the config");
    }
    std::vector<int> values;
    std::stringstream ss(values_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(std::stoi(item));
    }
    if (values.empty()) throw evlm::ConfigError("no sweep values given");

    const evlm::SweepResult result =
        evlm::sweep_nw(values, cfg.stages, cfg.model, cfg.test_manifest, out);
    std::cout << result.to_table();
    std::cout << "table written to " << (fs::path(out) / "sweep.json").string() << "\n";
    for (const evlm::SweepCell& c : result.cells) {
        if (c.status != "ok") return kExitNumeric;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-stream language model pipeline"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a simulated event-text dataset");
    size_t sim_n = 100;
    uint64_t sim_seed = 0;
    std::string sim_out = "data";
    int sim_res = 64;
    double sim_noise = 0.0;
    bool sim_validate = false;
    sim->add_option("--n", sim_n, "number of records");
    sim->add_option("--seed", sim_seed, "generation seed");
    sim->add_option("--out", sim_out, "output directory")->required();
    sim->add_option("--resolution", sim_res, "sensor side length");
    sim->add_option("--noise-rate", sim_noise, "background events per pixel per second");
    sim->add_flag("--validate", sim_validate, "re-decode every event file after writing");

    // train
    auto* train = app.add_subcommand("train", "run one training stage or the full pipeline");
    std::string train_config, train_out = "runs/out", train_ckpt;
    int train_stage_n = 0;
    bool train_pipeline = false;
    int64_t train_seed = -1;
    train->add_option("--config", train_config, "pipeline config JSON")->required();
    train->add_option("--out", train_out, "output directory");
    train->add_option("--stage", train_stage_n, "train a single stage (1|2|3)");
    train->add_flag("--pipeline", train_pipeline, "run stages 1-3");
    train->add_option("--checkpoint", train_ckpt, "starting checkpoint for a single stage");
    train->add_option("--seed", train_seed, "override every configured seed");

    // chat
    auto* chat = app.add_subcommand("chat", "interactive prompts against an event stream");
    std::string chat_ckpt, chat_events;
    double chat_temp = 0.0;
    uint64_t chat_seed = 0;
    int chat_max_new = 48;
    chat->add_option("--checkpoint", chat_ckpt, "checkpoint directory")->required();
    chat->add_option("--events", chat_events, "event stream file")->required();
    chat->add_option("--temperature", chat_temp, "0 = greedy");
    chat->add_option("--seed", chat_seed, "sampling seed");
    chat->add_option("--max-new", chat_max_new, "maximum generated tokens");

    // eval
    auto* eval = app.add_subcommand("eval", "metrics over a manifest");
    std::string eval_ckpt, eval_manifest, eval_out, eval_template = "vqa";
    bool eval_judge = false;
    size_t eval_limit = 0;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--manifest", eval_manifest, "JSONL manifest")->required();
    eval->add_option("--out", eval_out, "report path (stdout when omitted)");
    eval->add_flag("--judge", eval_judge, "also score with the external judge endpoint");
    eval->add_option("--judge-template", eval_template, "dc | cr | vqa");
    eval->add_option("--limit", eval_limit, "evaluate at most this many records");

    // render
    auto* render = app.add_subcommand("render", "accumulate a window into a PGM image");
    std::string render_events, render_out;
    uint64_t render_t0 = 0, render_t1 = 0;
    render->add_option("--events", render_events, "event stream file")->required();
    render->add_option("--t0", render_t0, "window start (us)");
    render->add_option("--t1", render_t1, "window end (us); 0 = end of stream");
    render->add_option("--out", render_out, "output .pgm")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference self-check of every op");
    uint64_t gc_seed = 0;
    int gc_instances = 20;
    gc->add_option("--seed", gc_seed, "random seed");
    gc->add_option("--instances", gc_instances, "random instances per op");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "train/eval across temporal window counts");
    std::string sweep_config, sweep_values = "3,5,7,9", sweep_out = "runs/sweep";
    sweep->add_option("--config", sweep_config, "pipeline config JSON")->required();
    sweep->add_option("--values", sweep_values, "comma-separated N_w values");
    sweep->add_option("--out", sweep_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            return cmd_simulate(sim_n, sim_seed, sim_out, sim_res, sim_noise, sim_validate);
        }
        if (train->parsed()) {
            return cmd_train(train_config, train_out, train_stage_n, train_pipeline, train_ckpt,
                             train_seed);
        }
        if (chat->parsed()) {
            return cmd_chat(chat_ckpt, chat_events, chat_temp, chat_seed, chat_max_new);
        }
        if (eval->parsed()) {
            return cmd_eval(eval_ckpt, eval_manifest, eval_out, eval_judge, eval_template,
                            eval_limit);
        }
        if (render->parsed()) {
            return cmd_render(render_events, render_t0, render_t1, render_out);
        }
        if (gc->parsed()) {
            const evlm::GradCheckReport report = evlm::run_gradcheck(gc_seed, gc_instances);
            std::cout << report.to_text();
            return report.all_passed() ? kExitOk : kExitNumeric;
        }
        if (sweep->parsed()) {
            return cmd_sweep(sweep_config, sweep_values, sweep_out);
        }
    } catch (const evlm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const evlm::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const evlm::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const evlm::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const evlm::JudgeError& e) {
        std::cerr << "judge error: " << e.what() << "\n";
        return kExitJudge;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
    return kExitOther;
}
