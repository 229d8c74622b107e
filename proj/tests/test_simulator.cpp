#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "evlm/dataset.hpp"
#include "evlm/digest.hpp"
#include "evlm/errors.hpp"
#include "evlm/rng.hpp"
#include "evlm/simulator.hpp"

using namespace evlm;
namespace fs = std::filesystem;

namespace {

SceneSpec base_scene() {
    SceneSpec s;
    s.shape = ShapeKind::kSquare;
    s.size_px = 18.0;
    s.vx = 50.0;
    s.vy = 0.0;
    s.x0 = 20.0;
    s.y0 = 32.0;
    s.fg = 0.8;
    s.bg = 0.2;
    s.duration_us = 250000;
    s.height = s.width = 64;
    s.contrast = 0.25;
    s.render_rate_hz = 2000.0;
    return s;
}

// Scene sampler mirroring the dataset generator's ranges, without the
// file IO a generation pass would drag in.
SceneSpec random_scene(Rng& rng) {
    SceneSpec s = base_scene();
    s.shape = static_cast<ShapeKind>(rng.below(3));
    s.size_px = rng.uniform(14.0, 24.0);
    const double speed = rng.uniform(15.0, 110.0);
    const double angle = rng.uniform(0.0, 2.0 * M_PI);
    s.vx = speed * std::cos(angle);
    s.vy = speed * std::sin(angle);
    s.contrast = rng.uniform(0.18, 0.32);
    const bool bright = rng.below(2) == 0;
    const double lo = rng.uniform(0.10, 0.25);
    const double hi = rng.uniform(0.55, 0.95);
    s.fg = bright ? hi : lo;
    s.bg = bright ? lo : hi;
    s.duration_us = 150000 + rng.below(100000);
    const double dur = static_cast<double>(s.duration_us) * 1e-6;
    const double margin = s.size_px / 2.0 + 2.0;
    const double x_lo = margin + std::max(0.0, -s.vx * dur);
    const double x_hi = 64.0 - margin - std::max(0.0, s.vx * dur);
    const double y_lo = margin + std::max(0.0, -s.vy * dur);
    const double y_hi = 64.0 - margin - std::max(0.0, s.vy * dur);
    if (x_lo >= x_hi || y_lo >= y_hi) return random_scene(rng); // too fast; resample
    s.x0 = rng.uniform(x_lo, x_hi);
    s.y0 = rng.uniform(y_lo, y_hi);
    return s;
}

size_t foreground_count(const SceneSpec& s, uint64_t t) {
    size_t n = 0;
    for (double v : render_intensity(s, t)) {
        if (v == s.fg) ++n;
    }
    return n;
}

} // namespace

TEST_CASE("render_intensity places the shape at start for t = 0") {
    SceneSpec s = base_scene();
    const std::vector<double> img = render_intensity(s, 0);
    // Center pixel of the square is foreground, far corner is background.
    CHECK(img[32 * 64 + 20] == s.fg);
    CHECK(img[0] == s.bg);
    CHECK_THROWS_AS(render_intensity(s, s.duration_us + 1), IndexError);
}

TEST_CASE("static scenes render identical frames at any two times") {
    SceneSpec s = base_scene();
    s.vx = s.vy = 0.0;
    CHECK(render_intensity(s, 0) == render_intensity(s, s.duration_us / 3));
    CHECK(render_intensity(s, 0) == render_intensity(s, s.duration_us));
}

TEST_CASE("foreground pixel count approximates the analytic area") {
    Rng rng(71);
    for (int trial = 0; trial < 12; ++trial) {
        SceneSpec s = random_scene(rng);
        const double half = s.size_px / 2.0;
        double area = 0.0;
        switch (s.shape) {
            case ShapeKind::kCircle: area = M_PI * half * half; break;
            case ShapeKind::kSquare: area = s.size_px * s.size_px; break;
            case ShapeKind::kTriangle: area = 0.5 * s.size_px * s.size_px; break;
        }
        const double count = static_cast<double>(foreground_count(s, 0));
        // Rounding band on the order of the perimeter.
        CHECK(std::abs(count - area) <= 4.0 * s.size_px + 4.0);
    }
}

TEST_CASE("zero motion produces zero events, quantified over random static specs") {
    Rng rng(73);
    for (int trial = 0; trial < 10; ++trial) {
        SceneSpec s = random_scene(rng);
        s.vx = s.vy = 0.0;
        s.x0 = 32.0;
        s.y0 = 32.0;
        CHECK(simulate_events(s).empty());
    }
}

TEST_CASE("a step of exactly two thresholds yields exactly two events of the step sign") {
    SceneSpec s = base_scene();
    // Contrast defined from the intensities so the log step is 2C bitwise.
    s.contrast = 0.5 * (std::log(s.fg) - std::log(s.bg));
    const EventStream ev = simulate_events(s);
    REQUIRE(!ev.empty());

    // A pixel the square's leading edge sweeps over: background at t=0,
    // foreground at the end.
    const int px = 40, py = 32;
    CHECK(render_intensity(s, 0)[py * 64 + px] == s.bg);
    CHECK(render_intensity(s, s.duration_us)[py * 64 + px] == s.fg);
    int count = 0;
    for (const Event& e : ev.events()) {
        if (e.x == px && e.y == py) {
            ++count;
            CHECK(e.p == 1);
        }
    }
    CHECK(count == 2);
}

TEST_CASE("per-pixel reconstruction bound holds over random scenes") {
    Rng rng(79);
    for (int trial = 0; trial < 10; ++trial) {
        const SceneSpec s = random_scene(rng);
        const EventStream ev = simulate_events(s);
        std::vector<int64_t> net(64 * 64, 0);
        for (const Event& e : ev.events()) net[static_cast<size_t>(e.y) * 64 + e.x] += e.p;
        const std::vector<double> first = render_intensity(s, 0);
        const std::vector<double> last = render_intensity(s, s.duration_us);
        for (size_t i = 0; i < net.size(); ++i) {
            const double delta = std::log(last[i]) - std::log(first[i]);
            CHECK(std::abs(s.contrast * static_cast<double>(net[i]) - delta) <= s.contrast);
        }
    }
}

TEST_CASE("leading edge of a bright shape fires +1 first, trailing edge -1") {
    SceneSpec s = base_scene(); // bright square moving east
    const EventStream ev = simulate_events(s);
    std::map<std::pair<int, int>, int8_t> first_polarity;
    for (const Event& e : ev.events()) {
        first_polarity.emplace(std::make_pair(static_cast<int>(e.x), static_cast<int>(e.y)), e.p);
    }
    // Ahead of the initial square (leading side), brightness rises first.
    CHECK(first_polarity.at({32, 32}) == 1);
    // A pixel initially inside that the square leaves darkens.
    CHECK(first_polarity.at({13, 32}) == -1);
}

TEST_CASE("doubling the render rate preserves each pixel's polarity sequence") {
    Rng rng(83);
    for (int trial = 0; trial < 6; ++trial) {
        SceneSpec s = random_scene(rng);
        SceneSpec s2 = s;
        s2.render_rate_hz = 2.0 * s.render_rate_hz;
        auto per_pixel = [](const EventStream& ev) {
            std::map<std::pair<int, int>, std::vector<int8_t>> seq;
            for (const Event& e : ev.events()) {
                seq[{static_cast<int>(e.x), static_cast<int>(e.y)}].push_back(e.p);
            }
            return seq;
        };
        CHECK(per_pixel(simulate_events(s)) == per_pixel(simulate_events(s2)));
    }
}

TEST_CASE("ground truth labels are pure functions of the scene") {
    SceneSpec s = base_scene();
    GroundTruth gt = ground_truth(s);
    CHECK(gt.shape == "square");
    CHECK(gt.direction == "east");
    CHECK(gt.speed == "medium");

    CHECK(direction_label(50.0, -50.0) == "northeast");
    CHECK(direction_label(0.0, 60.0) == "south");
    CHECK(direction_label(-10.0, 0.0) == "west");
    CHECK(direction_label(0.0, 0.0) == "none");
    CHECK(speed_label(10.0) == "slow");
    CHECK(speed_label(50.0) == "medium");
    CHECK(speed_label(100.0) == "fast");
}

TEST_CASE("caption and vqa templates match their pinned strings") {
    SceneSpec s = base_scene(); // square moving east at medium speed
    GroundTruth gt = ground_truth(s);
    const std::vector<Turn> caption = make_text(gt, "caption");
    CHECK(caption[1].text == "A square is moving east at medium speed.");

    gt.scene.seed = 3; // seed % 3 == 0 selects the shape question
    const std::vector<Turn> vqa = make_text(gt, "vqa");
    CHECK(vqa[0].text == "What shape is moving?");
    CHECK(vqa[1].text == "A square.");

    CHECK_THROWS_AS(make_text(gt, "story"), ConfigError);
}

TEST_CASE("reasoning answer equals the kinematics oracle") {
    Rng rng(89);
    for (int trial = 0; trial < 8; ++trial) {
        SceneSpec s = random_scene(rng);
        GroundTruth gt = ground_truth(s);
        const std::vector<Turn> turns = make_text(gt, "reasoning");
        const double t = static_cast<double>(s.duration_us + kReasoningHorizonUs) * 1e-6;
        const std::string expected = "Near (" + std::to_string(std::lround(s.x0 + s.vx * t)) +
                                     ", " + std::to_string(std::lround(s.y0 + s.vy * t)) + ").";
        CHECK(turns[1].text == expected);
    }
}

TEST_CASE("scene validation rejects out-of-frame and degenerate specs") {
    SceneSpec s = base_scene();
    s.x0 = 2.0; // shape pokes out on the left
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = base_scene();
    s.fg = s.bg;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = base_scene();
    s.contrast = 0.0;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("generate_dataset is deterministic and splits match the ratios") {
    const fs::path dir_a = fs::temp_directory_path() / "evlm_ds_a";
    const fs::path dir_b = fs::temp_directory_path() / "evlm_ds_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);

    GeneratorConfig cfg;
    cfg.count = 20;
    cfg.seed = 123;
    cfg.min_duration_us = 120000;
    cfg.max_duration_us = 160000;
    const GeneratedDataset a = generate_dataset(cfg, dir_a);
    const GeneratedDataset b = generate_dataset(cfg, dir_b);

    CHECK(a.train_count == 14); // floor(0.7 * 20)
    CHECK(a.val_count == 2);
    CHECK(a.test_count == 4);

    auto digest_tree = [](const fs::path& root) {
        std::map<std::string, std::string> out;
        for (const auto& entry : fs::recursive_directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            std::ifstream f(entry.path(), std::ios::binary);
            std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
            out[fs::relative(entry.path(), root).string()] = sha256_hex(bytes);
        }
        return out;
    };
    CHECK(digest_tree(dir_a) == digest_tree(dir_b));

    // Every referenced event file decodes and matches its meta.
    size_t total = 0;
    for (const fs::path& m : {a.train_manifest, a.val_manifest, a.test_manifest}) {
        total += validate_manifest(m);
    }
    CHECK(total == 20);

    // Ids are disjoint across splits.
    std::set<std::string> seen;
    for (const fs::path& m : {a.train_manifest, a.val_manifest, a.test_manifest}) {
        for (const DatasetRecord& rec : load_manifest(m)) {
            CHECK(seen.insert(rec.id).second);
        }
    }
    CHECK(seen.size() == 20);
}

TEST_CASE("manifest rejects malformed conversation layouts") {
    const std::string good = R"({"id":"r0","events":"e.evst","task":"vqa","conversations":[{"role":"user","text":"q"},{"role":"assistant","text":"a"}],"meta":{"shape":"square","direction":"east","speed":"slow","size_px":10.0,"velocity":[20.0,0.0],"start":[20.0,20.0],"fg":0.8,"bg":0.2,"duration_us":100000,"resolution":[64,64],"contrast":0.25,"render_rate":2000.0,"seed":1,"noise_rate":0.0}})";
    CHECK(record_from_json_line(good).task == "vqa");

    const std::string swapped = R"({"id":"r0","events":"e.evst","task":"vqa","conversations":[{"role":"assistant","text":"a"},{"role":"user","text":"q"}],"meta":{"shape":"square","direction":"east","speed":"slow","size_px":10.0,"velocity":[20.0,0.0],"start":[20.0,20.0],"fg":0.8,"bg":0.2,"duration_us":100000,"resolution":[64,64],"contrast":0.25,"render_rate":2000.0,"seed":1,"noise_rate":0.0}})";
    CHECK_THROWS_AS(record_from_json_line(swapped), FormatError);
}
