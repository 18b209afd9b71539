#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "homofm/data/dataset_io.hpp"
#include "homofm/data/pairs.hpp"
#include "homofm/data/raster.hpp"
#include "homofm/data/rng.hpp"
#include "homofm/data/synth.hpp"
#include "homofm/error.hpp"

using namespace homofm;
using namespace homofm::data;

namespace {

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.data().begin(), a.data().end(), b.data().begin(),
                    [](float x, float y) { return std::bit_cast<std::uint32_t>(x) ==
                                                  std::bit_cast<std::uint32_t>(y); });
}

bool samples_equal(const PairSample& a, const PairSample& b) {
  return bit_equal(a.source, b.source) && bit_equal(a.target, b.target) &&
         bit_equal(a.w_gt, b.w_gt) && a.h_gt.matrix() == b.h_gt.matrix() &&
         a.domain_source == b.domain_source && a.domain_target == b.domain_target;
}

GenConfig small_config() {
  GenConfig cfg;
  cfg.image_side = 32;
  cfg.rho = 4.0;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("philox matches the published known-answer vectors") {
  using W = std::array<std::uint32_t, 4>;
  CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == W{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                      {0xffffffff, 0xffffffff}) ==
        W{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                      {0xa4093822, 0x299f31d0}) ==
        W{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("rng streams are reproducible and independent of draw order") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  for (int i = 0; i < 37; ++i) (void)c.next_u32();
  Rng fresh(42);
  CHECK(c.split(5).next_u64() == fresh.split(5).next_u64());
  CHECK(fresh.split(5).next_u64() != fresh.split(6).next_u64());
  CHECK(Rng(1).next_u64() != Rng(2).next_u64());
}

TEST_CASE("rng distributions have the expected moments") {
  Rng r(7);
  const int n = 200000;
  double su = 0, su2 = 0, sn = 0, sn2 = 0;
  std::array<int, 5> counts{};
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    su2 += u * u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
    ++counts[r.below(5)];
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(su2 / n - (su / n) * (su / n) == doctest::Approx(1.0 / 12).epsilon(0.02));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  for (int k : counts) CHECK(k == doctest::Approx(n / 5.0).epsilon(0.03));
  const double v = r.uniform(-3.0, 2.0);
  CHECK(v >= -3.0);
  CHECK(v < 2.0);
}

TEST_CASE("perturb_corners examples") {
  Rng r(1);
  const auto [corners, zero] = perturb_corners(64, 0.0, r);
  for (const auto& d : zero) {
    CHECK(d.x == 0.0);
    CHECK(d.y == 0.0);
  }
  CHECK(corners[2].x == 63.0);

  Rng g(2);
  double sx = 0, sy = 0, worst = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto [c, off] = perturb_corners(64, 8.0, g);
    for (const auto& d : off) {
      sx += d.x;
      sy += d.y;
      worst = std::max({worst, std::abs(d.x), std::abs(d.y)});
    }
  }
  CHECK(std::abs(sx / (4 * n)) < 0.5);
  CHECK(std::abs(sy / (4 * n)) < 0.5);
  CHECK(worst <= 8.0);
  CHECK(worst > 7.9);
}

TEST_CASE("checker pattern has binary values and the cell period") {
  Rng r(3);
  const Tensor<float> img = synth_pattern(64, PatternKind::kChecker, r, 8);
  CHECK(img.shape() == Shape{3, 64, 64});
  for (float v : img.data()) CHECK((v == 0.0f || v == 1.0f));
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x + 16 < 64; ++x) {
      CHECK(img[y * 64 + x] == img[y * 64 + x + 16]);
      CHECK(img[x * 64 + y] == img[(x + 16) * 64 + y]);
    }
  }
  // One cell over flips the colour.
  std::size_t flips = 0;
  for (std::size_t x = 0; x + 8 < 64; ++x) flips += img[x] != img[x + 8];
  CHECK(flips == 56);
}

TEST_CASE("patterns are deterministic and stay in range") {
  for (auto kind : {PatternKind::kChecker, PatternKind::kBlobs, PatternKind::kGradients}) {
    Rng a(9), b(9);
    const auto x = synth_pattern(32, kind, a), y = synth_pattern(32, kind, b);
    CHECK(bit_equal(x, y));
    const auto [lo, hi] = std::minmax_element(x.data().begin(), x.data().end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
    CHECK(*hi - *lo > 0.2f);
    CHECK(parse_pattern(pattern_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_pattern("plaid"), ConfigError);
}

TEST_CASE("domain shift examples") {
  Rng r(4);
  const auto img = synth_pattern(32, PatternKind::kBlobs, r);
  const DomainShift inv{ShiftMode::kInvert};
  const auto twice = apply_domain_shift(apply_domain_shift(img, inv), inv);
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(twice[i] == doctest::Approx(img[i]).epsilon(1e-6));
  CHECK(bit_equal(apply_domain_shift(img, {ShiftMode::kGamma, 1.0}), img));
  CHECK(bit_equal(apply_domain_shift(img, {}), img));
  const auto g2 = apply_domain_shift(img, {ShiftMode::kGamma, 2.0});
  for (std::size_t i = 0; i < img.numel(); i += 97) CHECK(g2[i] == doctest::Approx(img[i] * img[i]));
  for (auto mode : {ShiftMode::kChannelMix, ShiftMode::kPseudoIr}) {
    const auto s = apply_domain_shift(img, {mode});
    CHECK(bit_equal(s, apply_domain_shift(img, {mode})));
    CHECK_FALSE(bit_equal(s, img));
    for (float v : s.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK_THROWS_AS(parse_shift_mode("sepia"), ConfigError);
  CHECK(parse_shift_mode("pseudo_ir") == ShiftMode::kPseudoIr);
  CHECK_THROWS_AS(apply_domain_shift(img, {ShiftMode::kGamma, 0.0}), DomainError);
  CHECK_THROWS_AS(apply_domain_shift(Tensor<float>::full({3, 4, 4}, 1.5f), inv), DomainError);
  CHECK_THROWS_AS(apply_domain_shift(Tensor<float>::zeros({1, 4, 4}), {ShiftMode::kPseudoIr}),
                  ShapeError);
}

TEST_CASE("pseudo infrared is monotone in luminance") {
  std::vector<float> v(3 * 1 * 11);
  for (std::size_t i = 0; i < 11; ++i) v[i] = v[11 + i] = v[22 + i] = static_cast<float>(i) / 10.0f;
  const auto s = apply_domain_shift(Tensor<float>({3, 1, 11}, v), {ShiftMode::kPseudoIr});
  for (std::size_t i = 1; i < 11; ++i) {
    const float prev = s[i - 1] + s[11 + i - 1] + s[22 + i - 1];
    const float cur = s[i] + s[11 + i] + s[22 + i];
    CHECK(cur >= prev);
  }
}

TEST_CASE("gen config validation") {
  GenConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.image_side = 60;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.image_side = 64;
  cfg.rho = 16.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.rho = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.rho = 8.0;
  CHECK(cfg.grid().height == 16);
  CHECK(cfg.grid().width == 16);
}

TEST_CASE("rho zero without shift gives identical images and the identity") {
  GenConfig cfg = small_config();
  cfg.rho = 0.0;
  const PairSample s = generate_sample(cfg, 3);
  CHECK(bit_equal(s.source, s.target));
  CHECK(geometry::canonical_relative_error(s.h_gt, geometry::Homography()) < 1e-15);
  for (float v : s.w_gt.data()) CHECK(std::abs(v) < 1e-12f);
  CHECK(s.domain_source == 0);
  CHECK(s.domain_target == 1);
}

TEST_CASE("ground truth field is the stride-4 grid view of the pixel homography") {
  const PairSample s = generate_sample(small_config(), 5);
  CHECK(s.w_gt.shape() == Shape{2, 8, 8});
  const geometry::GridFrame frame = geometry::GridFrame::for_stride(kGridStride);
  for (std::size_t gy = 0; gy < 8; ++gy) {
    for (std::size_t gx = 0; gx < 8; ++gx) {
      const geometry::Point2 p{4.0 * gx + 1.5, 4.0 * gy + 1.5};
      const geometry::Point2 q = s.h_gt.apply(p);
      CHECK(s.w_gt[gy * 8 + gx] == doctest::Approx((q.x - p.x) / 4.0).epsilon(1e-5));
      CHECK(s.w_gt[64 + gy * 8 + gx] == doctest::Approx((q.y - p.y) / 4.0).epsilon(1e-5));
    }
  }
  const auto corners = geometry::image_corners(32, 32);
  for (const auto& c : corners) {
    const auto q = s.h_gt.apply(c);
    CHECK(std::abs(q.x - c.x) <= 4.0 + 1e-9);
    CHECK(std::abs(q.y - c.y) <= 4.0 + 1e-9);
  }
}

TEST_CASE("target is the warped and shifted source") {
  GenConfig cfg = small_config();
  cfg.shift = {ShiftMode::kInvert};
  const PairSample s = generate_sample(cfg, 2);
  const auto expect =
      apply_domain_shift(geometry::warp_image(s.source, s.h_gt), {ShiftMode::kNone});
  // Inside the warped footprint the target is 1 - warp(source).
  std::size_t checked = 0;
  for (std::size_t i = 0; i < expect.numel(); ++i) {
    const std::size_t y = (i / 32) % 32, x = i % 32;
    if (x < 6 || y < 6 || x > 25 || y > 25) continue;
    CHECK(s.target[i] == doctest::Approx(1.0f - expect[i]).epsilon(1e-5));
    ++checked;
  }
  CHECK(checked > 1000);
}

TEST_CASE("generation rejects a base of the wrong size") {
  Rng r(1);
  CHECK_THROWS_AS(generate_pair(Tensor<float>::zeros({3, 16, 16}), small_config(), r), Error);
}

TEST_CASE("samples depend only on config and index") {
  const GenConfig cfg = small_config();
  const auto ds = generate_dataset(cfg, 4, 10);
  CHECK(samples_equal(ds[2], generate_sample(cfg, 12)));
  CHECK_FALSE(samples_equal(ds[0], ds[1]));
  GenConfig other = cfg;
  other.seed = 12;
  CHECK_FALSE(samples_equal(generate_sample(other, 10), ds[0]));
}

TEST_CASE("dataset round trip is bit identical and bytes are deterministic") {
  const GenConfig cfg = small_config();
  const Dataset ds{cfg, generate_dataset(cfg, 10)};
  const auto bytes = encode_dataset(ds);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HFMD");
  const Dataset back = decode_dataset(bytes);
  CHECK(back.config == cfg);
  REQUIRE(back.samples.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(samples_equal(back.samples[i], ds.samples[i]));
  CHECK(encode_dataset(Dataset{cfg, generate_dataset(cfg, 10)}) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "homofm_test_ds.hfmd";
  write_dataset(path, ds);
  const Dataset file = read_dataset(path);
  CHECK(file.samples.size() == 10);
  CHECK(samples_equal(file.samples[9], ds.samples[9]));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt datasets fail with an offset and no samples") {
  const GenConfig cfg = small_config();
  const auto bytes = encode_dataset(Dataset{cfg, generate_dataset(cfg, 3)});
  for (std::size_t cut : {std::size_t{2}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const std::span<const std::uint8_t> part(bytes.data(), cut);
    try {
      (void)decode_dataset(part);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() <= cut);
    }
  }
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(decode_dataset(extra), FormatError);
  CHECK_THROWS_AS(encode_dataset(Dataset{cfg, {}}), ConfigError);
  CHECK_THROWS_AS(read_dataset("/nonexistent/dir/x.hfmd"), Error);
}

TEST_CASE("polygon drawing colours the outline only") {
  auto img = Tensor<float>::zeros({3, 16, 16});
  const std::vector<geometry::Point2> quad{{2, 2}, {12, 2}, {12, 12}, {2, 12}};
  draw_polygon(img, quad, {1.0f, 0.0f, 0.0f});
  CHECK(img[2 * 16 + 7] == 1.0f);
  CHECK(img[7 * 16 + 12] == 1.0f);
  CHECK(img[7 * 16 + 7] == 0.0f);
  CHECK(img[256 + 2 * 16 + 7] == 0.0f);
  // Segments leaving the canvas are clipped rather than rejected.
  const std::vector<geometry::Point2> big{{-10, 8}, {30, 8}};
  CHECK_NOTHROW(draw_polygon(img, big, {0.0f, 1.0f, 0.0f}));
  CHECK(img[256 + 8 * 16 + 15] == 1.0f);
}

}
