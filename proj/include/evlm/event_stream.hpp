#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "evlm/tensor.hpp"

namespace evlm {

/// One brightness-change event: timestamp (microseconds), pixel, polarity.
struct Event {
    uint64_t t = 0;
    uint16_t x = 0;
    uint16_t y = 0;
    int8_t p = 1; // +1 brighter, -1 darker

    bool operator==(const Event&) const = default;
};

// Timestamp-sorted event sequence with its sensor geometry. Immutable
// after construction; the constructor enforces ordering, coordinate
// bounds and polarity values.
class EventStream {
public:
    EventStream(int width, int height, std::vector<Event> events);

    int width() const { return width_; }
    int height() const { return height_; }
    const std::vector<Event>& events() const { return events_; }
    size_t size() const { return events_.size(); }
    bool empty() const { return events_.empty(); }

private:
    int width_;
    int height_;
    std::vector<Event> events_;
};

/// Per-bin polarity-count grid: data is [T x 2 x H x W], channel 0
/// counting p=+1 and channel 1 counting p=-1.
struct VoxelGrid {
    int num_bins = 0;
    int channels = 2;
    int height = 0;
    int width = 0;
    Tensor data;

    double total() const;
};

/// Buckets events of [t0, t1] into `num_bins` equal windows; an event at
/// exactly t1 lands in the last bin, events outside the window are dropped.
VoxelGrid bin_events(const EventStream& s, uint64_t t0, uint64_t t1, int num_bins);

/// Divides each bin by max(1, its largest count); entries end up in [0, 1].
VoxelGrid normalize_grid(const VoxelGrid& g);

/// Per-pixel sum of polarities over [t0, t1], row-major H x W.
std::vector<int64_t> accumulate_polarity(const EventStream& s, uint64_t t0, uint64_t t1);

/// Signed accumulation mapped linearly to 8-bit gray with 0 at 128.
std::vector<uint8_t> render_frame(const EventStream& s, uint64_t t0, uint64_t t1);

/// Binary PGM (P5) writer for rendered frames.
void write_pgm(const std::filesystem::path& path, const std::vector<uint8_t>& pixels, int width,
               int height);

// Binary event container (little-endian): magic "EVST", version u16 = 1,
// width u16, height u16, count u64, then `count` records of
// {t u64, x u16, y u16, p i8, pad u8}.
void write_stream(const std::filesystem::path& path, const EventStream& s);
EventStream read_stream(const std::filesystem::path& path);

} // namespace evlm
