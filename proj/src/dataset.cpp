#include "evlm/dataset.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "evlm/errors.hpp"
#include "evlm/rng.hpp"

namespace evlm {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

ordered_json meta_to_json(const GroundTruth& gt) {
    const SceneSpec& s = gt.scene;
    ordered_json m;
    m["shape"] = gt.shape;
    m["direction"] = gt.direction;
    m["speed"] = gt.speed;
    m["size_px"] = s.size_px;
    m["velocity"] = {s.vx, s.vy};
    m["start"] = {s.x0, s.y0};
    m["fg"] = s.fg;
    m["bg"] = s.bg;
    m["duration_us"] = s.duration_us;
    m["resolution"] = {s.height, s.width};
    m["contrast"] = s.contrast;
    m["render_rate"] = s.render_rate_hz;
    m["seed"] = s.seed;
    m["noise_rate"] = s.noise_rate_hz;
    return m;
}

GroundTruth meta_from_json(const ordered_json& m) {
    GroundTruth gt;
    gt.shape = m.at("shape").get<std::string>();
    gt.direction = m.at("direction").get<std::string>();
    gt.speed = m.at("speed").get<std::string>();
    SceneSpec& s = gt.scene;
    s.shape = shape_from_name(gt.shape);
    s.size_px = m.at("size_px").get<double>();
    s.vx = m.at("velocity").at(0).get<double>();
    s.vy = m.at("velocity").at(1).get<double>();
    s.x0 = m.at("start").at(0).get<double>();
    s.y0 = m.at("start").at(1).get<double>();
    s.fg = m.at("fg").get<double>();
    s.bg = m.at("bg").get<double>();
    s.duration_us = m.at("duration_us").get<uint64_t>();
    s.height = m.at("resolution").at(0).get<int>();
    s.width = m.at("resolution").at(1).get<int>();
    s.contrast = m.at("contrast").get<double>();
    s.render_rate_hz = m.at("render_rate").get<double>();
    s.seed = m.at("seed").get<uint64_t>();
    s.noise_rate_hz = m.at("noise_rate").get<double>();
    return gt;
}

} // namespace

std::string record_to_json_line(const DatasetRecord& rec) {
    ordered_json j;
    j["id"] = rec.id;
    j["events"] = rec.events_path;
    j["task"] = rec.task;
    j["conversations"] = ordered_json::array();
    for (const Turn& t : rec.conversations) {
        j["conversations"].push_back({{"role", t.role}, {"text", t.text}});
    }
    j["meta"] = meta_to_json(rec.meta);
    return j.dump();
}

DatasetRecord record_from_json_line(const std::string& line) {
    ordered_json j;
    try {
        j = ordered_json::parse(line);
    } catch (const ordered_json::exception& e) {
        throw FormatError(std::string("malformed manifest line: ") + e.what());
    }
    DatasetRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.events_path = j.at("events").get<std::string>();
    rec.task = j.at("task").get<std::string>();
    for (const auto& t : j.at("conversations")) {
        rec.conversations.push_back({t.at("role").get<std::string>(), t.at("text").get<std::string>()});
    }
    if (rec.conversations.empty() || rec.conversations[0].role != "user") {
        throw FormatError("record " + rec.id + ": conversations must start with a user turn");
    }
    for (size_t i = 0; i < rec.conversations.size(); ++i) {
        const std::string expected = i % 2 == 0 ? "user" : "assistant";
        if (rec.conversations[i].role != expected) {
            throw FormatError("record " + rec.id + ": conversation turn " + std::to_string(i) +
                              " should be '" + expected + "'");
        }
    }
    rec.meta = meta_from_json(j.at("meta"));
    return rec;
}

std::vector<DatasetRecord> load_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open manifest " + path.string());
    std::vector<DatasetRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(record_from_json_line(line));
        } catch (const Error& e) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

size_t validate_manifest(const fs::path& path) {
    const std::vector<DatasetRecord> records = load_manifest(path);
    const fs::path base = path.parent_path();
    for (const DatasetRecord& rec : records) {
        const EventStream s = read_stream(base / rec.events_path);
        if (s.width() != rec.meta.scene.width || s.height() != rec.meta.scene.height) {
            throw FormatError("record " + rec.id + ": event file resolution " +
                              std::to_string(s.width()) + "x" + std::to_string(s.height()) +
                              " does not match meta " + std::to_string(rec.meta.scene.width) + "x" +
                              std::to_string(rec.meta.scene.height));
        }
    }
    return records.size();
}

// ---------------------------------------------------------------------------
// Generation

namespace {

SceneSpec sample_scene(Rng& rng, const GeneratorConfig& cfg, uint64_t record_seed) {
    SceneSpec s;
    s.height = s.width = cfg.resolution;
    s.render_rate_hz = cfg.render_rate_hz;
    s.noise_rate_hz = cfg.noise_rate_hz;
    s.seed = record_seed;
    s.duration_us = cfg.min_duration_us + rng.below(cfg.max_duration_us - cfg.min_duration_us + 1);

    // Speed buckets sit well inside the label thresholds (35 / 75 px/s).
    static const double kSpeedLo[3] = {15.0, 40.0, 80.0};
    static const double kSpeedHi[3] = {30.0, 70.0, 115.0};

    for (int attempt = 0; attempt < 64; ++attempt) {
        s.shape = static_cast<ShapeKind>(rng.below(3));
        s.size_px = rng.uniform(0.28, 0.42) * cfg.resolution;
        const int bucket = static_cast<int>(rng.below(3));
        const double speed = rng.uniform(kSpeedLo[bucket], kSpeedHi[bucket]);
        const double angle = static_cast<double>(rng.below(8)) * (M_PI / 4.0);
        s.vx = speed * std::cos(angle);
        s.vy = -speed * std::sin(angle); // +y is down; angle 90 means north
        const bool bright_shape = rng.below(2) == 0;
        const double lo = rng.uniform(0.10, 0.25);
        const double hi = rng.uniform(0.55, 0.95);
        s.fg = bright_shape ? hi : lo;
        s.bg = bright_shape ? lo : hi;
        s.contrast = rng.uniform(0.18, 0.32);

        const double dur_s = static_cast<double>(s.duration_us) * 1e-6;
        const double margin = s.size_px / 2.0 + 2.0;
        const double x_lo = margin + std::max(0.0, -s.vx * dur_s);
        const double x_hi = cfg.resolution - margin - std::max(0.0, s.vx * dur_s);
        const double y_lo = margin + std::max(0.0, -s.vy * dur_s);
        const double y_hi = cfg.resolution - margin - std::max(0.0, s.vy * dur_s);
        if (x_lo >= x_hi || y_lo >= y_hi) continue; // too fast for this frame; resample
        s.x0 = rng.uniform(x_lo, x_hi);
        s.y0 = rng.uniform(y_lo, y_hi);
        s.validate();
        return s;
    }
    throw ConfigError("could not place a scene inside the frame; resolution too small for the "
                      "sampled speeds");
}

const char* task_for_index(size_t index) {
    switch (index % 4) {
        case 0: return "caption";
        case 3: return "reasoning";
        default: return "vqa"; // two slots: vqa carries the acceptance metrics
    }
}

void write_manifest(const fs::path& path, const std::vector<DatasetRecord>& records, size_t begin,
                    size_t end) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    for (size_t i = begin; i < end; ++i) f << record_to_json_line(records[i]) << "\n";
    if (!f) throw IoError("write failed for " + path.string());
}

} // namespace

GeneratedDataset generate_dataset(const GeneratorConfig& cfg, const fs::path& out_dir) {
    if (cfg.count < 1) throw ConfigError("dataset count must be >= 1");
    const double ratio_sum = cfg.train_ratio + cfg.val_ratio + cfg.test_ratio;
    if (std::abs(ratio_sum - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(ratio_sum));
    }

    std::error_code ec;
    fs::create_directories(out_dir / "events", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "events").string() + ": " + ec.message());

    std::vector<DatasetRecord> records;
    records.reserve(cfg.count);
    for (size_t i = 0; i < cfg.count; ++i) {
        const uint64_t record_seed = mix_seed(cfg.seed, i);
        Rng rng(record_seed);
        const SceneSpec scene = sample_scene(rng, cfg, record_seed);
        const EventStream stream = simulate_events(scene);

        DatasetRecord rec;
        char id[16];
        std::snprintf(id, sizeof(id), "rec%05zu", i);
        rec.id = id;
        rec.events_path = std::string("events/") + rec.id + ".evst";
        rec.task = task_for_index(i);
        rec.meta = ground_truth(scene);
        rec.conversations = make_text(rec.meta, rec.task);
        write_stream(out_dir / rec.events_path, stream);
        records.push_back(std::move(rec));
    }

    const size_t n_train = static_cast<size_t>(std::floor(cfg.train_ratio * static_cast<double>(cfg.count)));
    const size_t n_val = static_cast<size_t>(std::floor(cfg.val_ratio * static_cast<double>(cfg.count)));

    GeneratedDataset out;
    out.train_manifest = out_dir / "train.jsonl";
    out.val_manifest = out_dir / "val.jsonl";
    out.test_manifest = out_dir / "test.jsonl";
    out.train_count = n_train;
    out.val_count = n_val;
    out.test_count = cfg.count - n_train - n_val;
    write_manifest(out.train_manifest, records, 0, n_train);
    write_manifest(out.val_manifest, records, n_train, n_train + n_val);
    write_manifest(out.test_manifest, records, n_train + n_val, cfg.count);
    return out;
}

} // namespace evlm
