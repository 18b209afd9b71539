#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "homofm/error.hpp"
#include "homofm/model/checkpoint.hpp"
#include "homofm/model/network.hpp"
#include "homofm/tensor/ops.hpp"

using namespace homofm;
using namespace homofm::model;

namespace {

ModelConfig mini_config(HeadKind kind = HeadKind::kFlowMatching) {
  ModelConfig cfg;
  cfg.encoder.base_channels = 4;
  cfg.head.hidden_channels = 8;
  cfg.head.n_residual_blocks = 1;
  cfg.head.time_embed_dim = 4;
  cfg.discriminator.hidden_dim = 4;
  cfg.head_kind = kind;
  return cfg;
}

Tensor<float> random_images(std::uint64_t seed, std::size_t b = 2, std::size_t side = 16) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> v(b * 3 * side * side);
  for (float& x : v) x = u(g);
  return Tensor<float>({b, 3, side, side}, v);
}

// Perturbs every parameter so zero-initialized layers stop masking paths.
template <typename T>
void jitter(Model<T>& m, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [name, t] : m.params.entries()) {
    auto d = const_cast<Tensor<T>&>(t).mutable_data();
    for (T& x : d) x += static_cast<T>(u(g));
  }
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation and architecture text") {
  ModelConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(parse_architecture_text(cfg.architecture_text()) == cfg);
  ModelConfig odd = cfg;
  odd.head.time_embed_dim = 5;
  CHECK_THROWS_AS(odd.validate(), ConfigError);
  ModelConfig zero = cfg;
  zero.encoder.base_channels = 0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
  // The alpha schedule is a training knob and does not change the hash.
  ModelConfig sched = cfg;
  sched.discriminator.alpha_max = 0.3;
  sched.discriminator.schedule = AlphaSchedule::kConstant;
  CHECK(sched.hash() == cfg.hash());
  ModelConfig wider = cfg;
  wider.head.hidden_channels = 65;
  CHECK(wider.hash() != cfg.hash());
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(parse_head_kind(head_kind_name(HeadKind::kDirectRegression)) ==
        HeadKind::kDirectRegression);
  CHECK_THROWS_AS(parse_head_kind("mlp"), ConfigError);
}

TEST_CASE("grl alpha schedule") {
  DomainDiscriminatorConfig c;
  CHECK(grl_alpha(c, 0, 100, 5) == 0.0);
  CHECK(grl_alpha(c, 4, 100, 5) == 0.0);
  CHECK(grl_alpha(c, 99, 100, 5) == doctest::Approx(1.0));
  const double mid = grl_alpha(c, 52, 100, 5);
  CHECK(mid > 0.0);
  CHECK(mid < 1.0);
  CHECK(grl_alpha(c, 30, 100, 5) < grl_alpha(c, 60, 100, 5));
  c.schedule = AlphaSchedule::kConstant;
  c.alpha_max = 0.7;
  CHECK(grl_alpha(c, 4, 100, 5) == 0.0);
  CHECK(grl_alpha(c, 5, 100, 5) == 0.7);
  CHECK(grl_alpha(c, 99, 100, 5) == 0.7);
}

TEST_CASE("parameter registry is deterministic") {
  const auto a = Model<float>::initialize(mini_config(), 3);
  const auto b = Model<float>::initialize(mini_config(), 3);
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    CHECK(a.params.entries()[i].first == b.params.entries()[i].first);
    CHECK(bit_equal(a.params.entries()[i].second, b.params.entries()[i].second));
  }
  const auto c = Model<float>::initialize(mini_config(), 4);
  CHECK_FALSE(bit_equal(a.params.get("enc.conv1.w"), c.params.get("enc.conv1.w")));
  for (const auto& [name, t] : a.params.entries()) {
    const bool prefixed = name.rfind("enc.", 0) == 0 || name.rfind("head.", 0) == 0 ||
                          name.rfind("disc.", 0) == 0;
    CHECK(prefixed);
  }
  CHECK_THROWS_AS(a.params.get("nope"), ConfigError);
  ModelParams<float> p;
  p.add("x", Tensor<float>::zeros({2}));
  CHECK_THROWS_AS(p.add("x", Tensor<float>::zeros({2})), ConfigError);
}

TEST_CASE("direct head width matches the flow head parameter budget") {
  const ModelConfig cfg;
  const std::size_t w = direct_head_width(cfg);
  const std::size_t target = fm_head_param_count(cfg);
  const auto gap = [&](std::size_t h) {
    const auto c = static_cast<double>(direct_head_param_count(cfg, h));
    return std::abs(c - static_cast<double>(target));
  };
  CHECK(gap(w) <= gap(w - 1));
  CHECK(gap(w) <= gap(w + 1));
  CHECK(gap(w) / static_cast<double>(target) < 0.05);
  ModelConfig fixed = cfg;
  fixed.direct_hidden = 17;
  CHECK(direct_head_width(fixed) == 17);
}

TEST_CASE("encoder shapes and determinism") {
  const auto m = Model<float>::initialize(mini_config(), 1);
  const auto img = random_images(1, 2, 32);
  const auto f = encode_features(img, m);
  CHECK(f.fine.shape() == Shape{2, 8, 8, 8});
  CHECK(f.coarse.shape() == Shape{2, 8, 4, 4});
  const auto g = encode_features(img, m);
  CHECK(bit_equal(f.fine, g.fine));
  CHECK_THROWS_AS(encode_features(random_images(1, 1, 20), m), ShapeError);
  CHECK_THROWS_AS(encode_features(Tensor<float>::zeros({1, 1, 16, 16}), m), ShapeError);
  // A zero image yields the same features whatever batch slot it occupies.
  const auto z = encode_features(Tensor<float>::zeros({2, 3, 16, 16}), m);
  const std::size_t half = z.fine.numel() / 2;
  for (std::size_t i = 0; i < half; ++i) CHECK(z.fine[i] == z.fine[half + i]);
}

TEST_CASE("context concatenation semantics") {
  const auto m = Model<float>::initialize(mini_config(), 2);
  const auto fs = encode_features(random_images(2), m).fine;
  const auto ft = encode_features(random_images(3), m).fine;
  const auto c = build_context(fs, ft);
  CHECK(c.shape() == Shape{2, 16, 4, 4});
  const auto swapped = build_context(ft, fs);
  const std::size_t block = 8 * 16;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < block; ++i) {
      CHECK(c[b * 2 * block + i] == swapped[b * 2 * block + block + i]);
      CHECK(c[b * 2 * block + block + i] == swapped[b * 2 * block + i]);
    }
  }
  const auto same = build_context(fs, fs);
  for (std::size_t i = 0; i < block; ++i) CHECK(same[i] == same[block + i]);
  CHECK_THROWS_AS(build_context(fs, encode_features(random_images(3, 2, 32), m).fine),
                  ShapeError);
}

TEST_CASE("time embedding") {
  const auto m = Model<float>::initialize(mini_config(), 3);
  const auto a = time_embed(Tensor<float>({1}, {0.3f}), m);
  const auto b = time_embed(Tensor<float>({1}, {0.3f}), m);
  CHECK(a.shape() == Shape{1, 4});
  CHECK(bit_equal(a, b));
  CHECK(time_embed(Tensor<float>({3}, {0.f, .5f, 1.f}), m).shape() == Shape{3, 4});
  CHECK_THROWS_AS(time_embed(Tensor<float>({1}, {1.5f}), m), DomainError);
}

TEST_CASE("velocity head shapes, zero init and time dependence") {
  auto m = Model<float>::initialize(mini_config(), 4);
  const auto f = encode_features(random_images(4), m).fine;
  const auto ctx = build_context(f, f);
  const auto x = Tensor<float>::full({2, 2, 4, 4}, 0.5f);
  const auto v = predict_velocity(x, Tensor<float>({1}, {0.2f}), ctx, m);
  CHECK(v.shape() == x.shape());
  for (float e : v.data()) CHECK(e == 0.0f);  // zero final layer
  const auto w = solve_field(ctx, m, flowmatch::SolverConfig(4));
  for (float e : w.data()) CHECK(e == 0.0f);
  jitter(m, 5);
  const auto v1 = predict_velocity(x, Tensor<float>({1}, {0.1f}), ctx, m);
  const auto v2 = predict_velocity(x, Tensor<float>({1}, {0.9f}), ctx, m);
  CHECK_FALSE(bit_equal(v1, v2));
  CHECK_THROWS_AS(predict_velocity(Tensor<float>::zeros({2, 2, 4, 5}), Tensor<float>({1}, {0.f}),
                                   ctx, m),
                  ShapeError);
}

TEST_CASE("direct head produces a field from the context") {
  auto m = Model<float>::initialize(mini_config(HeadKind::kDirectRegression), 5);
  jitter(m, 6);
  const auto f = encode_features(random_images(5), m).fine;
  const auto ctx = build_context(f, f);
  const auto w = predict_direct(ctx, m);
  CHECK(w.shape() == Shape{2, 2, 4, 4});
  // The step count does not matter for a one-shot head.
  CHECK(bit_equal(solve_field(ctx, m, flowmatch::SolverConfig(1)),
                  solve_field(ctx, m, flowmatch::SolverConfig(8))));
}

TEST_CASE("discriminator range, fresh output and alpha independence of the forward") {
  auto m = Model<float>::initialize(mini_config(), 6);
  const auto f = encode_features(random_images(6), m).fine;
  const auto p0 = discriminate_domain(f, m, 0.0f);
  for (float p : p0.data()) CHECK(p == 0.5f);
  jitter(m, 7, 2.0);
  const auto pa = discriminate_domain(f, m, 0.0f);
  CHECK(pa.shape() == Shape{2});
  for (float p : pa.data()) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
  CHECK(bit_equal(pa, discriminate_domain(f, m, 0.25f)));
  CHECK(bit_equal(pa, discriminate_domain(f, m, 1.0f)));
}

TEST_CASE("domain loss examples") {
  const auto half = Tensor<double>({1}, {0.5});
  CHECK(domain_loss(half, half).item() == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(domain_loss(Tensor<double>({1}, {0.9}), Tensor<double>({1}, {0.1})).item() ==
        doctest::Approx(-2.0 * std::log(0.9)));
  const double near_perfect =
      domain_loss(Tensor<double>({1}, {1.0}), Tensor<double>({1}, {0.0})).item();
  CHECK(near_perfect > 0.0);
  CHECK(near_perfect < 1e-6);
}

TEST_CASE("alpha zero cuts the domain branch from the encoder") {
  auto m = Model<double>::initialize(mini_config(), 8);
  jitter(m, 9);
  const auto imgs = Tensor<double>(random_images(7).shape(),
                                   [&] {
                                     const auto f = random_images(7);
                                     return std::vector<double>(f.data().begin(), f.data().end());
                                   }());
  m.params.zero_grad();
  GradTape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    const auto f = encode_features(imgs, m).fine;
    const auto p = discriminate_domain(f, m, 0.0);
    loss = domain_loss(p, p);
  }
  tape.backward(loss);
  for (const auto& t : m.params.tensors("enc.")) {
    for (double g : t.grad()) CHECK(g == 0.0);
  }
  double disc = 0.0;
  for (const auto& t : m.params.tensors("disc.")) {
    for (double g : t.grad()) disc += std::abs(g);
  }
  CHECK(disc > 0.0);
}

TEST_CASE("forward_align contract") {
  const auto m = Model<float>::initialize(mini_config(), 10);
  const auto s = random_images(11), t = random_images(12);
  const auto r = forward_align(s, t, m, flowmatch::SolverConfig(2));
  CHECK(r.field.shape() == Shape{2, 2, 4, 4});
  REQUIRE(r.h_pred.size() == 2);
  for (const auto& h : r.h_pred) {
    CHECK(h.matrix().norm() == doctest::Approx(1.0));
    // The untrained head predicts zero velocity, so the identity.
    CHECK(geometry::canonical_relative_error(h, geometry::Homography()) < 1e-9);
  }
  const auto r2 = forward_align(s, t, m, flowmatch::SolverConfig(2));
  CHECK(bit_equal(r.field, r2.field));
}

TEST_CASE("homography_from_field inverts the ground-truth construction") {
  const geometry::Homography h = geometry::four_point_to_homography(
      geometry::image_corners(32, 32),
      geometry::CornerOffsets{{{1.5, -2.0}, {-0.5, 1.0}, {2.0, 2.5}, {-1.0, -3.0}}});
  const auto frame = geometry::GridFrame::for_stride(4);
  const auto field = geometry::displacement_from_homography(frame.to_grid(h), {8, 8});
  const auto back = homography_from_field(field.to_tensor<double>());
  CHECK(geometry::average_corner_error(back, h, geometry::image_corners(32, 32)) < 1e-6);
}

TEST_CASE("checkpoint round trip reproduces outputs bit-exactly") {
  auto m = Model<float>::initialize(mini_config(), 12);
  jitter(m, 13);
  const auto bytes = encode_checkpoint(m, 77);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "HFMC");
  const Checkpoint ck = decode_checkpoint(bytes);
  CHECK(ck.step == 77);
  CHECK(ck.model.config == m.config);
  const auto s = random_images(14), t = random_images(15);
  const auto a = forward_align(s, t, m, flowmatch::SolverConfig(2)).field;
  const auto b = forward_align(s, t, ck.model, flowmatch::SolverConfig(2)).field;
  CHECK(bit_equal(a, b));

  const auto path = std::filesystem::temp_directory_path() / "homofm_test_ckpt.hfmc";
  save_checkpoint(path, m, 5);
  CHECK(load_checkpoint(path, m.config).step == 5);
  ModelConfig other = m.config;
  other.head.hidden_channels = 16;
  CHECK_THROWS_AS(load_checkpoint(path, other), IncompatibleCheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto m = Model<float>::initialize(mini_config(), 16);
  auto bytes = encode_checkpoint(m, 1);
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes.data(), bytes.size() - 3)), FormatError);
  auto magic = bytes;
  magic[1] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
  // Flipping a byte of the architecture text breaks the stored hash.
  auto text = bytes;
  text[14] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(text), FormatError);
}

TEST_CASE("parameter casts and clones are independent copies") {
  const auto m = Model<float>::initialize(mini_config(), 17);
  const auto d = m.params.cast<double>();
  CHECK(d.size() == m.params.size());
  CHECK(d.scalar_count() == m.params.scalar_count());
  auto c = m.params.clone();
  const_cast<Tensor<float>&>(c.get("enc.conv1.w")).mutable_data()[0] += 1.0f;
  CHECK(c.get("enc.conv1.w")[0] != m.params.get("enc.conv1.w")[0]);
}

}
