#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rotcatt/data.hpp"

using namespace rotcatt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("rotcatt_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool in_blob(const PhantomGeometry& g, int64_t z, int64_t y, int64_t x) {
  for (const Blob& b : g.blobs) {
    const double dz = (double(z) - b.z) / b.radius_z, dy = (double(y) - b.y) / b.radius_yx,
                 dx = (double(x) - b.x) / b.radius_yx;
    if (dz * dz + dy * dy + dx * dx <= 1.0) return true;
  }
  return false;
}

uint64_t fnv(const std::vector<char>& bytes) {
  uint64_t h = 1469598103934665603ull;
  for (char c : bytes) {
    h ^= uint8_t(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<char> read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("phantom is deterministic per seed") {
  auto a = generate_phantom(11, 16, 64, 64, 4), b = generate_phantom(11, 16, 64, 64, 4);
  CHECK(std::equal(a.intensities.span().begin(), a.intensities.span().end(), b.intensities.span().begin()));
  CHECK(std::equal(a.labels.span().begin(), a.labels.span().end(), b.labels.span().begin()));
  auto c = generate_phantom(12, 16, 64, 64, 4);
  CHECK_FALSE(std::equal(a.labels.span().begin(), a.labels.span().end(), c.labels.span().begin()));
  CHECK_THROWS_AS(generate_phantom(1, 16, 64, 64, 2), ConfigError);
  CHECK_THROWS_AS(generate_phantom(1, 2, 64, 64, 4), ConfigError);
}

TEST_CASE("phantom structure") {
  for (uint64_t seed : {0ull, 1ull, 2ull, 3ull, 17ull}) {
    for (int k : {3, 4, 6}) {
      INFO("seed " << seed << " classes " << k);
      const auto g = describe_phantom(seed, 16, 64, 64, k);
      const auto v = generate_phantom(seed, 16, 64, 64, k);
      validate_volume(v);
      const int tube = k - 1;
      CHECK(double(g.tube_z_end - g.tube_z_begin + 1) >= 0.6 * 16);
      CHECK(g.tube_radius >= 1.0);
      CHECK(g.tube_radius <= 2.0);
      CHECK(g.blobs.size() >= 3);
      CHECK(g.blobs.size() <= 6);

      std::vector<int64_t> hist(size_t(k), 0);
      for (auto l : v.labels.span()) ++hist[l];
      CHECK(hist[0] * 2 > v.labels.numel());
      for (int c = 1; c < k; ++c) CHECK(hist[size_t(c)] > 0);

      for (int64_t z = 0; z < 16; ++z) {
        int64_t count = 0;
        for (int64_t i = 0; i < 64 * 64; ++i) count += v.labels[z * 64 * 64 + i] == tube;
        if (z >= g.tube_z_begin && z <= g.tube_z_end) CHECK(count >= 1);
        if (z < g.tube_z_begin || z > g.tube_z_end) CHECK(count == 0);
      }

      for (int64_t z = 0; z < 16; ++z) {
        for (int64_t y = 0; y < 64; ++y) {
          for (int64_t x = 0; x < 64; ++x) {
            if (g.in_tube(z, y, x)) REQUIRE(v.labels.at({z, y, x}) == tube);
          }
        }
      }

      double bg_sum = 0, bg_sq = 0, tube_sum = 0;
      int64_t bg_n = 0, tube_n = 0;
      for (int64_t z = 0; z < 16; ++z) {
        for (int64_t y = 0; y < 64; ++y) {
          for (int64_t x = 0; x < 64; ++x) {
            const double val = v.intensities.at({z, y, x});
            const auto l = v.labels.at({z, y, x});
            if (l == 0 && !in_blob(g, z, y, x)) {
              bg_sum += val;
              bg_sq += val * val;
              ++bg_n;
            } else if (l == tube) {
              tube_sum += val;
              ++tube_n;
            }
          }
        }
      }
      const double bg_mean = bg_sum / double(bg_n);
      const double sigma = std::sqrt(bg_sq / double(bg_n) - bg_mean * bg_mean);
      CHECK(tube_sum / double(tube_n) - bg_mean >= 3 * sigma);
    }
  }
}

TEST_CASE("normalization") {
  Tensor<float> flat({2, 2, 2}, 7.0f);
  const auto zeros = normalize(flat);
  for (float v : zeros.span()) CHECK(v == 0.0f);
  Tensor<float> ramp({1, 1, 11});
  for (int64_t i = 0; i < 11; ++i) ramp[i] = float(i);
  auto n = normalize(ramp);
  for (int64_t i = 0; i < 11; ++i) CHECK(n[i] == float(i) / 10.0f);
  auto v = generate_phantom(3, 16, 32, 32, 4).intensities;
  auto once = normalize(v), twice = normalize(once);
  CHECK(std::equal(once.span().begin(), once.span().end(), twice.span().begin()));
  for (float x : v.span()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  ramp[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(normalize(ramp), NumericError);
}

TEST_CASE("window starts") {
  CHECK(window_starts(16, 8, SliceMode::Train) == std::vector<int64_t>{0, 8});
  CHECK(window_starts(16, 8, SliceMode::Eval) == std::vector<int64_t>{0, 6, 8});
  CHECK(window_starts(8, 8, SliceMode::Train) == std::vector<int64_t>{0});
  CHECK(window_starts(8, 8, SliceMode::Eval) == std::vector<int64_t>{0});
  CHECK(window_starts(19, 8, SliceMode::Train) == std::vector<int64_t>{0, 8});
  CHECK_THROWS_AS(window_starts(7, 8, SliceMode::Train), DataError);
}

TEST_CASE("eval windows cover every slice as an interior slice") {
  for (int64_t s : {3, 8, 9, 16, 23, 40}) {
    for (int b : {3, 4, 5, 8}) {
      if (s < b) continue;
      const auto starts = window_starts(s, b, SliceMode::Eval);
      for (size_t i = 1; i < starts.size(); ++i) CHECK(starts[i] > starts[i - 1]);
      const auto assign = eval_assignment(s, b);
      REQUIRE(assign.size() == size_t(s));
      for (int64_t z = 1; z + 1 < s; ++z) {
        const int64_t st = starts[assign[size_t(z)]];
        CHECK(z > st);
        CHECK(z < st + b - 1);
      }
      CHECK(assign.front() == 0);
      CHECK(assign.back() == starts.size() - 1);
    }
  }
}

TEST_CASE("slice batches are consecutive windows") {
  auto v = generate_phantom(5, 16, 32, 32, 4);
  auto batches = slice_batches(v, 8, SliceMode::Eval);
  REQUIRE(batches.size() == 3);
  const auto& b = batches[1];
  CHECK(b.start == 6);
  CHECK(b.images.shape() == Shape{8, 1, 32, 32});
  CHECK(b.labels.shape() == Shape{8, 32, 32});
  for (int64_t k = 0; k < 8; ++k) {
    CHECK(b.images.at({k, 0, 4, 9}) == v.intensities.at({6 + k, 4, 9}));
    CHECK(b.labels.at({k, 16, 16}) == v.labels.at({6 + k, 16, 16}));
  }
}

TEST_CASE("volume round trip is bit exact") {
  const auto dir = scratch("roundtrip");
  auto v = generate_phantom(9, 6, 16, 16, 5);
  save_volume(v, (dir / "p").string());
  CHECK(fs::file_size(dir / "p.vol") == 6 * 16 * 16 * 4);
  CHECK(fs::file_size(dir / "p.lbl") == 6 * 16 * 16);
  for (const char* name : {"p", "p.vol", "p.json", "p.lbl"}) {
    auto back = load_volume((dir / name).string());
    CHECK(back.spacing == v.spacing);
    CHECK(back.num_classes == 5);
    CHECK(std::equal(v.intensities.span().begin(), v.intensities.span().end(), back.intensities.span().begin()));
    CHECK(std::equal(v.labels.span().begin(), v.labels.span().end(), back.labels.span().begin()));
  }
}

TEST_CASE("corrupt files are rejected") {
  const auto dir = scratch("corrupt");
  auto v = generate_phantom(9, 4, 16, 16, 4);
  save_volume(v, (dir / "p").string());
  fs::resize_file(dir / "p.vol", fs::file_size(dir / "p.vol") - 4);
  CHECK_THROWS_AS(load_volume((dir / "p").string()), DataError);
  save_volume(v, (dir / "q").string());
  std::ofstream(dir / "q.json") << "{\"shape\": [4, 16";
  CHECK_THROWS_AS(load_volume((dir / "q").string()), DataError);
  CHECK_THROWS_AS(load_volume((dir / "missing").string()), DataError);
}

TEST_CASE("payload is little-endian regardless of host") {
  const std::vector<float> values{1.0f, -2.5f, 0.1f};
  auto bytes = encode_f32_le(values);
  const std::vector<char> expect{0x00, 0x00, char(0x80), 0x3f, 0x00, 0x00, 0x20, char(0xc0),
                                 char(0xcd), char(0xcc), char(0xcc), 0x3d};
  CHECK(bytes == expect);
  CHECK(decode_f32_le(bytes) == values);

  const auto dir = scratch("endian");
  auto v = generate_phantom(2, 4, 16, 16, 4);
  save_volume(v, (dir / "a").string());
  auto back = load_volume((dir / "a").string());
  save_volume(back, (dir / "b").string());
  CHECK(fnv(read_all(dir / "a.vol")) == fnv(read_all(dir / "b.vol")));
  CHECK(fnv(read_all(dir / "a.vol")) == fnv(encode_f32_le(v.intensities.span())));
  CHECK(fnv(read_all(dir / "a.lbl")) == fnv(read_all(dir / "b.lbl")));
}
