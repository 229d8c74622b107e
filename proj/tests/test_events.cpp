#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "evlm/errors.hpp"
#include "evlm/event_stream.hpp"
#include "evlm/rng.hpp"

using namespace evlm;
namespace fs = std::filesystem;

namespace {

std::vector<Event> random_events(Rng& rng, size_t n, int w, int h, uint64_t t_max) {
    std::vector<Event> ev(n);
    for (Event& e : ev) {
        e.t = rng.below(t_max);
        e.x = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(w)));
        e.y = static_cast<uint16_t>(rng.below(static_cast<uint64_t>(h)));
        e.p = rng.below(2) == 0 ? 1 : -1;
    }
    std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    return ev;
}

} // namespace

TEST_CASE("empty stream bins to an all-zero grid") {
    EventStream s(8, 8, {});
    VoxelGrid g = bin_events(s, 0, 1000, 4);
    CHECK(g.total() == 0.0);
    CHECK(g.data.shape() == Shape{4, 2, 8, 8});
}

TEST_CASE("single event lands in the bin the formula dictates") {
    EventStream s(8, 8, {{250, 3, 4, 1}});
    VoxelGrid g = bin_events(s, 0, 500, 5);
    CHECK(g.total() == 1.0);
    CHECK(g.data.at({2, 0, 4, 3}) == 1.0);
}

TEST_CASE("boundary handling: t == t1 clamps into the last bin, outside is dropped") {
    EventStream s(4, 4, {{0, 0, 0, 1}, {500, 1, 1, -1}, {501, 2, 2, 1}});
    VoxelGrid g = bin_events(s, 0, 500, 5);
    CHECK(g.total() == 2.0);
    CHECK(g.data.at({0, 0, 0, 0}) == 1.0);
    CHECK(g.data.at({4, 1, 1, 1}) == 1.0); // clamped terminal event
}

TEST_CASE("1000 random events match an independent per-event loop oracle") {
    Rng rng(41);
    const int w = 13, h = 9, bins = 7;
    const uint64_t t0 = 100, t1 = 9100;
    std::vector<Event> ev = random_events(rng, 1000, w, h, 10000);
    EventStream s(w, h, ev);
    VoxelGrid g = bin_events(s, t0, t1, bins);

    // Brute-force re-binning, one event at a time.
    std::vector<double> oracle(static_cast<size_t>(bins) * 2 * h * w, 0.0);
    size_t in_window = 0;
    for (const Event& e : ev) {
        if (e.t < t0 || e.t > t1) continue;
        ++in_window;
        size_t bin = static_cast<size_t>((e.t - t0) * static_cast<uint64_t>(bins) / (t1 - t0));
        if (bin >= static_cast<size_t>(bins)) bin = static_cast<size_t>(bins) - 1;
        const size_t ch = e.p > 0 ? 0 : 1;
        oracle[((bin * 2 + ch) * h + e.y) * w + e.x] += 1.0;
    }
    CHECK(g.data.value() == oracle);
    CHECK(g.total() == static_cast<double>(in_window));
}

TEST_CASE("binning is order independent") {
    Rng rng(43);
    std::vector<Event> ev = random_events(rng, 400, 6, 6, 5000);
    EventStream sorted_stream(6, 6, ev);
    // A different stable order with equal timestamps shuffled.
    std::vector<Event> jittered = ev;
    std::reverse(jittered.begin(), jittered.end());
    std::stable_sort(jittered.begin(), jittered.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    EventStream second(6, 6, jittered);
    CHECK(bin_events(sorted_stream, 0, 5000, 5).data.value() ==
          bin_events(second, 0, 5000, 5).data.value());
}

TEST_CASE("two disjoint consecutive windows concatenate to the union's two-bin grid") {
    Rng rng(47);
    const uint64_t t0 = 0, tm = 4000, t1 = 8000;
    std::vector<Event> ev = random_events(rng, 600, 10, 10, t1 + 1);
    // Keep the shared boundary empty so both windows see disjoint events.
    ev.erase(std::remove_if(ev.begin(), ev.end(),
                            [&](const Event& e) { return e.t == tm || e.t == t1; }),
             ev.end());
    EventStream s(10, 10, ev);

    VoxelGrid left = bin_events(s, t0, tm, 1);
    VoxelGrid right = bin_events(s, tm, t1, 1);
    VoxelGrid both = bin_events(s, t0, t1, 2);

    std::vector<double> joined = left.data.value();
    joined.insert(joined.end(), right.data.value().begin(), right.data.value().end());
    CHECK(joined == both.data.value());
}

TEST_CASE("invalid window is rejected") {
    EventStream s(4, 4, {});
    CHECK_THROWS_AS(bin_events(s, 10, 10, 2), ConfigError);
    CHECK_THROWS_AS(bin_events(s, 10, 5, 2), ConfigError);
    CHECK_THROWS_AS(bin_events(s, 0, 10, 0), ConfigError);
}

TEST_CASE("normalize: zero grid, single count, idempotence") {
    EventStream empty(4, 4, {});
    VoxelGrid zero = bin_events(empty, 0, 100, 2);
    CHECK(normalize_grid(zero).data.value() == zero.data.value());

    EventStream four(4, 4, {{1, 2, 2, 1}, {2, 2, 2, 1}, {3, 2, 2, 1}, {4, 2, 2, 1}});
    VoxelGrid g = bin_events(four, 0, 100, 1);
    VoxelGrid n = normalize_grid(g);
    CHECK(n.data.at({0, 0, 2, 2}) == 1.0);

    Rng rng(53);
    std::vector<Event> ev = random_events(rng, 300, 5, 5, 1000);
    VoxelGrid r = bin_events(EventStream(5, 5, ev), 0, 1000, 3);
    VoxelGrid once = normalize_grid(r);
    VoxelGrid twice = normalize_grid(once);
    CHECK(once.data.value() == twice.data.value());
    for (double v : once.data.value()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("render: empty window is uniform mid-gray") {
    EventStream s(6, 4, {});
    std::vector<uint8_t> img = render_frame(s, 0, 100);
    CHECK(img.size() == 24);
    for (uint8_t v : img) CHECK(v == 128);
}

TEST_CASE("render: a single positive event brightens only its pixel") {
    EventStream s(6, 4, {{50, 2, 1, 1}});
    std::vector<uint8_t> img = render_frame(s, 0, 100);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 6; ++x) {
            const uint8_t v = img[static_cast<size_t>(y) * 6 + x];
            if (x == 2 && y == 1) {
                CHECK(v > 128);
            } else {
                CHECK(v == 128);
            }
        }
    }
}

TEST_CASE("rendered sums equal single-bin channel difference") {
    Rng rng(59);
    std::vector<Event> ev = random_events(rng, 500, 8, 8, 2000);
    EventStream s(8, 8, ev);
    const std::vector<int64_t> acc = accumulate_polarity(s, 0, 2000);
    VoxelGrid g = bin_events(s, 0, 2000, 1);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            const double diff = g.data.at({0, 0, y, x}) - g.data.at({0, 1, y, x});
            CHECK(static_cast<double>(acc[static_cast<size_t>(y) * 8 + x]) == diff);
        }
    }
}

TEST_CASE("codec round-trip: empty stream") {
    const fs::path path = fs::temp_directory_path() / "evlm_empty.evst";
    EventStream s(32, 16, {});
    write_stream(path, s);
    EventStream back = read_stream(path);
    CHECK(back.width() == 32);
    CHECK(back.height() == 16);
    CHECK(back.empty());
}

TEST_CASE("codec round-trip: 100k random events are bit-identical") {
    Rng rng(61);
    const fs::path path = fs::temp_directory_path() / "evlm_big.evst";
    std::vector<Event> ev = random_events(rng, 100000, 640, 480, 10000000);
    EventStream s(640, 480, ev);
    write_stream(path, s);
    const EventStream back = read_stream(path);
    REQUIRE(back.size() == s.size());
    CHECK(back.events() == s.events());

    // Writing the decoded stream again reproduces the file bytes.
    const fs::path path2 = fs::temp_directory_path() / "evlm_big2.evst";
    write_stream(path2, back);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("corrupted magic is a format error with offset, no partial stream") {
    const fs::path path = fs::temp_directory_path() / "evlm_corrupt.evst";
    EventStream s(8, 8, {{10, 1, 1, 1}});
    write_stream(path, s);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_WITH_AS(read_stream(path), doctest::Contains("offset 0"), FormatError);
}

TEST_CASE("truncated body and bad polarity carry byte offsets") {
    const fs::path path = fs::temp_directory_path() / "evlm_trunc.evst";
    EventStream s(8, 8, {{10, 1, 1, 1}, {20, 2, 2, -1}});
    write_stream(path, s);
    fs::resize_file(path, fs::file_size(path) - 3);
    CHECK_THROWS_AS(read_stream(path), FormatError);

    const fs::path path2 = fs::temp_directory_path() / "evlm_badp.evst";
    write_stream(path2, s);
    {
        // Polarity byte of the first record sits at 18 + 12.
        std::fstream f(path2, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(30);
        f.put(3);
    }
    CHECK_THROWS_WITH_AS(read_stream(path2), doctest::Contains("polarity"), FormatError);
}

TEST_CASE("out-of-range coordinates in a file are rejected") {
    const fs::path path = fs::temp_directory_path() / "evlm_oob.evst";
    EventStream s(8, 8, {{10, 7, 7, 1}});
    write_stream(path, s);
    {
        // x field of record 0 is at offset 18 + 8.
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(26);
        f.put(9);
    }
    CHECK_THROWS_WITH_AS(read_stream(path), doctest::Contains("out of range"), FormatError);
}

TEST_CASE("constructor enforces stream invariants") {
    CHECK_THROWS_AS(EventStream(4, 4, {{10, 5, 0, 1}}), IndexError);
    CHECK_THROWS_AS(EventStream(4, 4, {{10, 0, 0, 2}}), FormatError);
    CHECK_THROWS_AS(EventStream(4, 4, {{10, 0, 0, 1}, {5, 0, 0, 1}}), FormatError);
}
