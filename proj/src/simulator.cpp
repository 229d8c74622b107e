#include "evlm/simulator.hpp"

#include <algorithm>
#include <cmath>

#include "evlm/errors.hpp"
#include "evlm/rng.hpp"

namespace evlm {

const char* shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::kCircle: return "circle";
        case ShapeKind::kSquare: return "square";
        case ShapeKind::kTriangle: return "triangle";
    }
    return "circle";
}

ShapeKind shape_from_name(const std::string& name) {
    if (name == "circle") return ShapeKind::kCircle;
    if (name == "square") return ShapeKind::kSquare;
    if (name == "triangle") return ShapeKind::kTriangle;
    throw ConfigError("unknown shape name: " + name);
}

double SceneSpec::speed() const { return std::sqrt(vx * vx + vy * vy); }

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("scene resolution must be positive");
    if (size_px <= 1.0) throw ConfigError("shape size must exceed one pixel");
    if (fg <= 0.0 || fg > 1.0 || bg <= 0.0 || bg > 1.0) {
        throw ConfigError("intensities must lie in (0, 1]");
    }
    if (fg == bg) throw ConfigError("foreground intensity must differ from background");
    if (contrast <= 0.0) throw ConfigError("contrast threshold must be positive");
    if (duration_us == 0) throw ConfigError("duration must be positive");
    if (render_rate_hz <= 0.0) throw ConfigError("render rate must be positive");
    // Linear motion: extremes sit at the endpoints.
    const double half = size_px / 2.0 + 1.0;
    for (double t : {0.0, static_cast<double>(duration_us) * 1e-6}) {
        const double cx = x0 + vx * t;
        const double cy = y0 + vy * t;
        if (cx - half < 0.0 || cx + half > width || cy - half < 0.0 || cy + half > height) {
            throw ConfigError("shape leaves the frame at t=" + std::to_string(t) + "s");
        }
    }
}

std::string direction_label(double vx, double vy) {
    if (vx == 0.0 && vy == 0.0) return "none";
    static const char* kNames[8] = {"east", "northeast", "north",     "northwest",
                                    "west", "southwest", "south",     "southeast"};
    // Screen coordinates: +y is down, so north is -y.
    const double angle = std::atan2(-vy, vx); // (-pi, pi]
    int sector = static_cast<int>(std::floor(angle / (M_PI / 4.0) + 0.5));
    sector = ((sector % 8) + 8) % 8;
    return kNames[sector];
}

std::string speed_label(double speed) {
    if (speed < 35.0) return "slow";
    if (speed < 75.0) return "medium";
    return "fast";
}

GroundTruth ground_truth(const SceneSpec& spec) {
    GroundTruth gt;
    gt.shape = shape_name(spec.shape);
    gt.direction = direction_label(spec.vx, spec.vy);
    gt.speed = speed_label(spec.speed());
    gt.scene = spec;
    return gt;
}

namespace {

bool inside_shape(const SceneSpec& spec, double cx, double cy, double px, double py) {
    const double dx = px - cx;
    const double dy = py - cy;
    const double h = spec.size_px / 2.0;
    switch (spec.shape) {
        case ShapeKind::kCircle:
            return dx * dx + dy * dy <= h * h;
        case ShapeKind::kSquare:
            return std::abs(dx) <= h && std::abs(dy) <= h;
        case ShapeKind::kTriangle: {
            // Upward-pointing isoceles triangle inscribed in the size box.
            if (dy < -h || dy > h) return false;
            const double frac = (dy + h) / (2.0 * h); // 0 at apex, 1 at base
            return std::abs(dx) <= h * frac;
        }
    }
    return false;
}

} // namespace

std::vector<double> render_intensity(const SceneSpec& spec, uint64_t t_us) {
    if (t_us > spec.duration_us) {
        throw IndexError("render time " + std::to_string(t_us) + "us outside [0, " +
                         std::to_string(spec.duration_us) + "us]");
    }
    const double t = static_cast<double>(t_us) * 1e-6;
    const double cx = spec.x0 + spec.vx * t;
    const double cy = spec.y0 + spec.vy * t;
    std::vector<double> img(static_cast<size_t>(spec.height) * spec.width, spec.bg);
    // Only scan the shape's bounding box.
    const double half = spec.size_px / 2.0 + 1.0;
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - half)));
    const int x_hi = std::min(spec.width - 1, static_cast<int>(std::ceil(cx + half)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - half)));
    const int y_hi = std::min(spec.height - 1, static_cast<int>(std::ceil(cy + half)));
    for (int y = y_lo; y <= y_hi; ++y) {
        for (int x = x_lo; x <= x_hi; ++x) {
            if (inside_shape(spec, cx, cy, x + 0.5, y + 0.5)) {
                img[static_cast<size_t>(y) * spec.width + x] = spec.fg;
            }
        }
    }
    return img;
}

EventStream simulate_events(const SceneSpec& spec) {
    spec.validate();
    const int64_t pixels = static_cast<int64_t>(spec.height) * spec.width;
    const double dur_s = static_cast<double>(spec.duration_us) * 1e-6;
    const int64_t frames = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(dur_s * spec.render_rate_hz)));

    // Reference level per pixel is base + C * n with integer event count n,
    // so it cannot drift over long simulations.
    std::vector<double> log_base(static_cast<size_t>(pixels));
    std::vector<int64_t> ref_count(static_cast<size_t>(pixels), 0);
    std::vector<double> log_prev(static_cast<size_t>(pixels));
    {
        const std::vector<double> img0 = render_intensity(spec, 0);
        for (int64_t i = 0; i < pixels; ++i) {
            log_base[static_cast<size_t>(i)] = std::log(img0[static_cast<size_t>(i)]);
            log_prev[static_cast<size_t>(i)] = log_base[static_cast<size_t>(i)];
        }
    }

    const double c = spec.contrast;
    std::vector<Event> events;
    uint64_t t_prev_us = 0;
    for (int64_t k = 1; k <= frames; ++k) {
        const uint64_t t_k_us = spec.duration_us * static_cast<uint64_t>(k) / static_cast<uint64_t>(frames);
        const std::vector<double> img = render_intensity(spec, t_k_us);
        const double dt = static_cast<double>(t_k_us - t_prev_us);
        for (int64_t i = 0; i < pixels; ++i) {
            const size_t ui = static_cast<size_t>(i);
            const double l_cur = std::log(img[ui]);
            if (l_cur == log_prev[ui]) continue;
            const double ref = log_base[ui] + c * static_cast<double>(ref_count[ui]);
            const double diff = l_cur - ref;
            const int64_t n = static_cast<int64_t>(std::floor(std::abs(diff) / c));
            if (n > 0) {
                const int8_t p = diff > 0 ? 1 : -1;
                const double l_prev = log_prev[ui];
                const double denom = l_cur - l_prev;
                for (int64_t j = 1; j <= n; ++j) {
                    const double level = ref + c * static_cast<double>(p) * static_cast<double>(j);
                    double frac = (level - l_prev) / denom;
                    frac = std::clamp(frac, 0.0, 1.0);
                    Event e;
                    e.t = t_prev_us + static_cast<uint64_t>(frac * dt);
                    e.x = static_cast<uint16_t>(i % spec.width);
                    e.y = static_cast<uint16_t>(i / spec.width);
                    e.p = p;
                    events.push_back(e);
                }
                ref_count[ui] += p * n;
            }
            log_prev[ui] = l_cur;
        }
        t_prev_us = t_k_us;
    }

    if (spec.noise_rate_hz > 0.0) {
        Rng rng(mix_seed(spec.seed, 0x6e6f6973));
        const double expected = spec.noise_rate_hz * dur_s * static_cast<double>(pixels);
        const int64_t count = static_cast<int64_t>(std::llround(expected));
        for (int64_t i = 0; i < count; ++i) {
            Event e;
            e.t = rng.below(spec.duration_us + 1);
            const uint64_t px = rng.below(static_cast<uint64_t>(pixels));
            e.x = static_cast<uint16_t>(px % static_cast<uint64_t>(spec.width));
            e.y = static_cast<uint16_t>(px / static_cast<uint64_t>(spec.width));
            e.p = rng.below(2) == 0 ? 1 : -1;
            events.push_back(e);
        }
    }

    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.y != b.y) return a.y < b.y;
        if (a.x != b.x) return a.x < b.x;
        return a.p < b.p;
    });
    return EventStream(spec.width, spec.height, std::move(events));
}

// ---------------------------------------------------------------------------
// Conversation templates

std::string vqa_attribute(const GroundTruth& gt) {
    switch (gt.scene.seed % 3) {
        case 0: return "shape";
        case 1: return "direction";
        default: return "speed";
    }
}

namespace {

std::string capitalized(std::string s) {
    if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
    return s;
}

} // namespace

std::vector<Turn> make_text(const GroundTruth& gt, const std::string& task) {
    if (task == "caption") {
        return {{"user", "Describe the motion in the scene."},
                {"assistant",
                 "A " + gt.shape + " is moving " + gt.direction + " at " + gt.speed + " speed."}};
    }
    if (task == "vqa") {
        const std::string attr = vqa_attribute(gt);
        if (attr == "shape") {
            return {{"user", "What shape is moving?"}, {"assistant", "A " + gt.shape + "."}};
        }
        if (attr == "direction") {
            return {{"user", "Which direction is the object moving?"},
                    {"assistant", capitalized(gt.direction) + "."}};
        }
        return {{"user", "How fast is the object moving?"}, {"assistant", capitalized(gt.speed) + "."}};
    }
    if (task == "reasoning") {
        const double horizon_s =
            static_cast<double>(gt.scene.duration_us + kReasoningHorizonUs) * 1e-6;
        const long fx = std::lround(gt.scene.x0 + gt.scene.vx * horizon_s);
        const long fy = std::lround(gt.scene.y0 + gt.scene.vy * horizon_s);
        return {{"user", "Where will the " + gt.shape + " be 100 ms after the window ends?"},
                {"assistant", "Near (" + std::to_string(fx) + ", " + std::to_string(fy) + ")."}};
    }
    throw ConfigError("unknown task: " + task);
}

} // namespace evlm
