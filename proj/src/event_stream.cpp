#include "evlm/event_stream.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "evlm/errors.hpp"

namespace evlm {

namespace fs = std::filesystem;

EventStream::EventStream(int width, int height, std::vector<Event> events)
    : width_(width), height_(height), events_(std::move(events)) {
    if (width <= 0 || height <= 0) {
        throw ShapeError("sensor resolution must be positive, got " + std::to_string(width) + "x" +
                         std::to_string(height));
    }
    uint64_t prev_t = 0;
    for (size_t i = 0; i < events_.size(); ++i) {
        const Event& e = events_[i];
        if (e.x >= width_ || e.y >= height_) {
            throw IndexError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + ", " +
                             std::to_string(e.y) + ") outside sensor " + std::to_string(width_) + "x" +
                             std::to_string(height_));
        }
        if (e.p != 1 && e.p != -1) {
            throw FormatError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
        }
        if (i > 0 && e.t < prev_t) {
            throw FormatError("events not sorted by timestamp at index " + std::to_string(i));
        }
        prev_t = e.t;
    }
}

double VoxelGrid::total() const {
    double s = 0.0;
    for (double v : data.value()) s += v;
    return s;
}

VoxelGrid bin_events(const EventStream& s, uint64_t t0, uint64_t t1, int num_bins) {
    if (t1 <= t0) {
        throw ConfigError("invalid window [" + std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
    if (num_bins < 1) throw ConfigError("num_bins must be >= 1, got " + std::to_string(num_bins));

    VoxelGrid g;
    g.num_bins = num_bins;
    g.height = s.height();
    g.width = s.width();
    g.data = Tensor::zeros({num_bins, 2, g.height, g.width});

    const uint64_t span = t1 - t0;
    const int64_t plane = static_cast<int64_t>(g.height) * g.width;
    std::vector<double>& d = g.data.value();
    for (const Event& e : s.events()) {
        if (e.t < t0 || e.t > t1) continue;
        // 128-bit product; (t - t0) * num_bins can exceed 64 bits.
        uint64_t bin = static_cast<uint64_t>(static_cast<__uint128_t>(e.t - t0) *
                                             static_cast<__uint128_t>(num_bins) / span);
        if (bin >= static_cast<uint64_t>(num_bins)) bin = static_cast<uint64_t>(num_bins) - 1;
        const int ch = e.p > 0 ? 0 : 1;
        d[static_cast<size_t>((static_cast<int64_t>(bin) * 2 + ch) * plane + e.y * g.width + e.x)] += 1.0;
    }
    return g;
}

VoxelGrid normalize_grid(const VoxelGrid& g) {
    VoxelGrid out = g;
    out.data = Tensor(g.data.shape(), g.data.value());
    const int64_t per_bin = 2LL * g.height * g.width;
    std::vector<double>& d = out.data.value();
    for (int t = 0; t < g.num_bins; ++t) {
        double* bin = d.data() + static_cast<int64_t>(t) * per_bin;
        double peak = 0.0;
        for (int64_t i = 0; i < per_bin; ++i) peak = std::max(peak, bin[i]);
        const double inv = 1.0 / std::max(1.0, peak);
        for (int64_t i = 0; i < per_bin; ++i) bin[i] *= inv;
    }
    return out;
}

std::vector<int64_t> accumulate_polarity(const EventStream& s, uint64_t t0, uint64_t t1) {
    if (t1 <= t0) {
        throw ConfigError("invalid window [" + std::to_string(t0) + ", " + std::to_string(t1) + "]");
    }
    std::vector<int64_t> acc(static_cast<size_t>(s.height()) * s.width(), 0);
    for (const Event& e : s.events()) {
        if (e.t < t0 || e.t > t1) continue;
        acc[static_cast<size_t>(e.y) * s.width() + e.x] += e.p;
    }
    return acc;
}

std::vector<uint8_t> render_frame(const EventStream& s, uint64_t t0, uint64_t t1) {
    const std::vector<int64_t> acc = accumulate_polarity(s, t0, t1);
    int64_t peak = 0;
    for (int64_t v : acc) peak = std::max(peak, std::abs(v));
    const double gain = peak > 0 ? 127.0 / static_cast<double>(peak) : 0.0;
    std::vector<uint8_t> img(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) {
        const double v = 128.0 + gain * static_cast<double>(acc[i]);
        img[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
    }
    return img;
}

void write_pgm(const fs::path& path, const std::vector<uint8_t>& pixels, int width, int height) {
    if (static_cast<size_t>(width) * height != pixels.size()) {
        throw ShapeError("pixel buffer does not match " + std::to_string(width) + "x" +
                         std::to_string(height));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Binary codec

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', 'T'};
constexpr uint16_t kVersion = 1;
constexpr size_t kHeaderBytes = 4 + 2 + 2 + 2 + 8;
constexpr size_t kRecordBytes = 8 + 2 + 2 + 1 + 1;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

} // namespace

void write_stream(const fs::path& path, const EventStream& s) {
    std::string buf;
    buf.reserve(kHeaderBytes + kRecordBytes * s.size());
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    put_u16(buf, static_cast<uint16_t>(s.width()));
    put_u16(buf, static_cast<uint16_t>(s.height()));
    put_u64(buf, s.size());
    for (const Event& e : s.events()) {
        put_u64(buf, e.t);
        put_u16(buf, e.x);
        put_u16(buf, e.y);
        buf.push_back(static_cast<char>(e.p));
        buf.push_back(0);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

EventStream read_stream(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const uint8_t* p = reinterpret_cast<const uint8_t*>(buf.data());

    if (buf.size() < kHeaderBytes) {
        throw FormatError(path.string() + ": truncated header (" + std::to_string(buf.size()) +
                          " bytes at offset 0)");
    }
    if (std::memcmp(p, kMagic, 4) != 0) {
        throw FormatError(path.string() + ": bad magic at offset 0");
    }
    if (get_u16(p + 4) != kVersion) {
        throw FormatError(path.string() + ": unsupported version at offset 4");
    }
    const int width = get_u16(p + 6);
    const int height = get_u16(p + 8);
    if (width == 0 || height == 0) {
        throw FormatError(path.string() + ": zero sensor resolution at offset 6");
    }
    const uint64_t count = get_u64(p + 10);
    if (buf.size() != kHeaderBytes + count * kRecordBytes) {
        throw FormatError(path.string() + ": body size " + std::to_string(buf.size() - kHeaderBytes) +
                          " does not match count " + std::to_string(count) + " at offset " +
                          std::to_string(kHeaderBytes));
    }

    std::vector<Event> events;
    events.reserve(count);
    uint64_t prev_t = 0;
    for (uint64_t i = 0; i < count; ++i) {
        const size_t off = kHeaderBytes + i * kRecordBytes;
        const uint8_t* r = p + off;
        Event e;
        e.t = get_u64(r);
        e.x = get_u16(r + 8);
        e.y = get_u16(r + 10);
        e.p = static_cast<int8_t>(r[12]);
        if (e.x >= width || e.y >= height) {
            throw FormatError(path.string() + ": coordinates (" + std::to_string(e.x) + ", " +
                              std::to_string(e.y) + ") out of range at offset " + std::to_string(off));
        }
        if (e.p != 1 && e.p != -1) {
            throw FormatError(path.string() + ": invalid polarity at offset " + std::to_string(off + 12));
        }
        if (i > 0 && e.t < prev_t) {
            throw FormatError(path.string() + ": timestamps not sorted at offset " + std::to_string(off));
        }
        prev_t = e.t;
        events.push_back(e);
    }
    return EventStream(width, height, std::move(events));
}

} // namespace evlm
