#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evlm/event_stream.hpp"

namespace evlm {

enum class ShapeKind { kCircle, kSquare, kTriangle };

const char* shape_name(ShapeKind s);
ShapeKind shape_from_name(const std::string& name);

// Parametric single-object scene: a flat shape of constant intensity
// translating linearly over a flat background.
struct SceneSpec {
    ShapeKind shape = ShapeKind::kCircle;
    double size_px = 20.0;        // diameter / side length
    double vx = 0.0, vy = 0.0;    // pixels per second; +y points down
    double x0 = 32.0, y0 = 32.0;  // center at t = 0
    double fg = 0.8, bg = 0.2;    // intensities in (0, 1]
    uint64_t duration_us = 250000;
    int height = 64, width = 64;
    double contrast = 0.25;       // threshold C on |delta log intensity|
    double render_rate_hz = 2000; // frames per second driving the simulation
    uint64_t seed = 0;
    double noise_rate_hz = 0.0;   // background events per pixel per second

    double speed() const;
    /// Throws ConfigError when the shape leaves the frame, intensities are
    /// out of range, or thresholds are non-positive.
    void validate() const;
};

// Labels derived from the scene; pure functions of SceneSpec.
struct GroundTruth {
    std::string shape;
    std::string direction; // 8-way compass; "none" for zero velocity
    std::string speed;     // slow | medium | fast
    SceneSpec scene;
};

GroundTruth ground_truth(const SceneSpec& spec);

/// Compass label of (vx, vy) in screen coordinates (+y down).
std::string direction_label(double vx, double vy);
/// Bucket label of |v| in px/s: slow < 35, medium < 75, fast otherwise.
std::string speed_label(double speed);

/// Analytic rasterization at time t (microseconds), pixel-center sampling;
/// returns H x W intensities in (0, 1].
std::vector<double> render_intensity(const SceneSpec& spec, uint64_t t_us);

/// Contrast-threshold event camera model: per pixel, events fire whenever
/// log intensity moves a full threshold away from the reference level,
/// which then steps by the threshold per event. Timestamps interpolate
/// linearly inside each rendered frame interval. Output sorted by
/// (t, y, x, p).
EventStream simulate_events(const SceneSpec& spec);

// Conversation templates over the closed label vocabulary.
struct Turn {
    std::string role; // "user" | "assistant"
    std::string text;
};

/// Attribute probed by this scene's VQA pair: "shape" | "direction" | "speed".
std::string vqa_attribute(const GroundTruth& gt);

/// Horizon used by reasoning questions (time past the end of the window).
constexpr uint64_t kReasoningHorizonUs = 100000;

/// Deterministic template fill for task in {caption, vqa, reasoning}.
std::vector<Turn> make_text(const GroundTruth& gt, const std::string& task);

} // namespace evlm
