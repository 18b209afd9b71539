#include "homofm/verify/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "homofm/data/pairs.hpp"
#include "homofm/data/rng.hpp"
#include "homofm/flowmatch/flow.hpp"
#include "homofm/model/network.hpp"
#include "homofm/tensor/ops.hpp"
#include "homofm/train/trainer.hpp"

namespace homofm::verify {

std::string GradCheckResult::to_line() const {
  std::ostringstream os;
  os << (passed ? "PASS " : "FAIL ") << name << " coords=" << checked
     << " max_rel=" << max_rel_error << " max_abs=" << max_abs_error;
  return os.str();
}

GradCheckResult gradcheck(const std::string& name, const LossFn& loss,
                          std::vector<Tensor<double>> inputs, const GradCheckConfig& cfg) {
  GradCheckResult r;
  r.name = name;
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    GradTape<double> tape;
    Tensor<double> value;
    {
      TapeScope<double> scope(tape);
      value = loss(inputs);
    }
    tape.backward(value);
  }
  NoGradScope<double> frozen;
  for (auto& x : inputs) {
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + cfg.h;
      const double up = loss(inputs).item();
      values[i] = saved - cfg.h;
      const double down = loss(inputs).item();
      values[i] = saved;
      const double numeric = cfg.fd_scale * (up - down) / (2.0 * cfg.h);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), cfg.floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      r.max_rel_error = std::max(r.max_rel_error, abs_err / denom);
      ++r.checked;
    }
  }
  r.passed = r.checked > 0 && r.max_rel_error < cfg.tolerance;
  return r;
}

namespace {

using T = double;
using Tn = Tensor<double>;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed, 0x67726164) {}  // "grad"

  Tn uniform(Shape shape, double lo, double hi) {
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = rng_.uniform(lo, hi);
    return Tn(std::move(shape), std::move(v));
  }

  /// Values with magnitude in [0.1, 1] and random sign, clear of the kinks
  /// of relu, l2_norm and friends.
  Tn signed_away_from_zero(Shape shape) {
    Tn t = uniform(std::move(shape), 0.1, 1.0);
    for (T& x : t.mutable_data()) {
      if (rng_.below(2) == 0) x = -x;
    }
    return t;
  }

  /// Coordinates in [lo, hi) whose fractional part avoids the bilinear
  /// kinks at integers.
  Tn coords(Shape shape, double lo, double hi) {
    Tn t = uniform(std::move(shape), lo, hi);
    for (T& x : t.mutable_data()) {
      const double base = std::floor(x);
      x = base + 0.1 + 0.8 * (x - base);
    }
    return t;
  }

 private:
  data::Rng rng_;
};

// sum(out * w) with a fixed weight tensor, turning any output into a scalar
// that exercises every output coordinate.
Tn weighted(const Tn& out, const Tn& w) { return ops::sum(ops::mul(out, w)); }

}  // namespace

std::vector<GradCheckResult> gradient_suite(std::uint64_t seed, const GradCheckConfig& cfg) {
  Sampler s(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, const LossFn& fn, std::vector<Tn> inputs,
                   double fd_scale = 1.0) {
    GradCheckConfig c = cfg;
    c.fd_scale = fd_scale;
    out.push_back(gradcheck(name, fn, std::move(inputs), c));
  };

  const Tn w234 = s.uniform({2, 3, 4}, -1, 1);
  check("add_broadcast", [&](const auto& in) { return weighted(ops::add(in[0], in[1]), w234); },
        {s.uniform({2, 3, 4}, -1, 1), s.uniform({1, 3, 1}, -1, 1)});
  check("sub_broadcast", [&](const auto& in) { return weighted(ops::sub(in[0], in[1]), w234); },
        {s.uniform({2, 3, 4}, -1, 1), s.uniform({2, 1, 4}, -1, 1)});
  check("mul_broadcast", [&](const auto& in) { return weighted(ops::mul(in[0], in[1]), w234); },
        {s.uniform({2, 3, 4}, -1, 1), s.uniform({1, 3, 4}, -1, 1)});
  check("scale", [&](const auto& in) { return weighted(ops::scale(in[0], -1.7), w234); },
        {s.uniform({2, 3, 4}, -1, 1)});
  check("add_scalar", [&](const auto& in) { return weighted(ops::add_scalar(in[0], 0.3), w234); },
        {s.uniform({2, 3, 4}, -1, 1)});
  check("relu", [&](const auto& in) { return weighted(ops::relu(in[0]), w234); },
        {s.signed_away_from_zero({2, 3, 4})});
  check("sigmoid", [&](const auto& in) { return weighted(ops::sigmoid(in[0]), w234); },
        {s.uniform({2, 3, 4}, -3, 3)});
  check("log", [&](const auto& in) { return weighted(ops::log(in[0]), w234); },
        {s.uniform({2, 3, 4}, 0.2, 2)});
  check("exp", [&](const auto& in) { return weighted(ops::exp(in[0]), w234); },
        {s.uniform({2, 3, 4}, -1, 1)});
  check("sqrt", [&](const auto& in) { return weighted(ops::sqrt(in[0]), w234); },
        {s.uniform({2, 3, 4}, 0.2, 2)});
  check("clamp", [&](const auto& in) { return weighted(ops::clamp(in[0], -0.5, 0.5), w234); },
        {s.signed_away_from_zero({2, 3, 4})});
  check("sum", [&](const auto& in) { return ops::scale(ops::sum(in[0]), 0.7); },
        {s.uniform({2, 3, 4}, -1, 1)});
  check("mean", [&](const auto& in) { return ops::scale(ops::mean(in[0]), 0.7); },
        {s.uniform({2, 3, 4}, -1, 1)});
  const Tn w24 = s.uniform({2, 1, 4}, -1, 1);
  check("sum_axis", [&](const auto& in) { return weighted(ops::sum_axis(in[0], 1), w24); },
        {s.uniform({2, 3, 4}, -1, 1)});
  check("l2_norm", [&](const auto& in) { return weighted(ops::l2_norm(in[0], 1), w24); },
        {s.signed_away_from_zero({2, 3, 4})});
  const Tn w254 = s.uniform({2, 5, 4}, -1, 1);
  check("concat", [&](const auto& in) { return weighted(ops::concat(in[0], in[1], 1), w254); },
        {s.uniform({2, 3, 4}, -1, 1), s.uniform({2, 2, 4}, -1, 1)});
  const Tn w64 = s.uniform({6, 4}, -1, 1);
  check("reshape", [&](const auto& in) { return weighted(ops::reshape(in[0], {6, 4}), w64); },
        {s.uniform({2, 3, 4}, -1, 1)});
  const Tn w224 = s.uniform({2, 2, 4}, -1, 1);
  check("slice", [&](const auto& in) { return weighted(ops::slice(in[0], 1, 1, 3), w224); },
        {s.uniform({2, 3, 4}, -1, 1)});
  const Tn w35 = s.uniform({3, 5}, -1, 1);
  check("matmul", [&](const auto& in) { return weighted(ops::matmul(in[0], in[1]), w35); },
        {s.uniform({3, 4}, -1, 1), s.uniform({4, 5}, -1, 1)});

  const Tn wc1 = s.uniform({2, 3, 5, 5}, -1, 1);
  check("conv2d_s1_p1",
        [&](const auto& in) { return weighted(ops::conv2d(in[0], in[1], in[2], 1, 1), wc1); },
        {s.uniform({2, 2, 5, 5}, -1, 1), s.uniform({3, 2, 3, 3}, -1, 1), s.uniform({3}, -1, 1)});
  const Tn wc2 = s.uniform({1, 2, 3, 3}, -1, 1);
  check("conv2d_s2_p1",
        [&](const auto& in) { return weighted(ops::conv2d(in[0], in[1], in[2], 2, 1), wc2); },
        {s.uniform({1, 3, 6, 6}, -1, 1), s.uniform({2, 3, 3, 3}, -1, 1), s.uniform({2}, -1, 1)});
  const Tn wc3 = s.uniform({1, 2, 4, 4}, -1, 1);
  check("conv2d_1x1_nobias",
        [&](const auto& in) { return weighted(ops::conv2d(in[0], in[1], Tn{}, 1, 0), wc3); },
        {s.uniform({1, 3, 4, 4}, -1, 1), s.uniform({2, 3, 1, 1}, -1, 1)});

  // Coordinates reach past every border so the zero-padding path is covered.
  const Tn wb = s.uniform({2, 3, 3}, -1, 1);
  check("bilinear_sample_image_and_coords",
        [&](const auto& in) { return weighted(ops::bilinear_sample(in[0], in[1]), wb); },
        {s.uniform({2, 4, 5}, -1, 1), s.coords({3, 3, 2}, -1.5, 5.5)});
  const Tn wbb = s.uniform({2, 1, 2, 3}, -1, 1);
  check("bilinear_sample_batched",
        [&](const auto& in) { return weighted(ops::bilinear_sample(in[0], in[1]), wbb); },
        {s.uniform({2, 1, 4, 4}, -1, 1), s.coords({2, 2, 3, 2}, -0.9, 3.9)});

  for (double alpha : {0.0, 0.25, 1.0}) {
    std::ostringstream name;
    name << "grad_reverse_alpha_" << alpha;
    check(name.str(),
          [&, alpha](const auto& in) { return weighted(ops::grad_reverse(in[0], alpha), w234); },
          {s.uniform({2, 3, 4}, -1, 1)}, -alpha);
  }

  const Tn wg = s.uniform({2, 3}, -1, 1);
  check("global_avg_pool", [&](const auto& in) { return weighted(ops::global_avg_pool(in[0]), wg); },
        {s.uniform({2, 3, 4, 4}, -1, 1)});
  const Tn wp = s.uniform({2, 3, 2, 2}, -1, 1);
  check("avg_pool2d", [&](const auto& in) { return weighted(ops::avg_pool2d(in[0], 2), wp); },
        {s.uniform({2, 3, 4, 4}, -1, 1)});
  const Tn wu = s.uniform({1, 2, 6, 6}, -1, 1);
  check("upsample_bilinear",
        [&](const auto& in) { return weighted(ops::upsample_bilinear(in[0], 2), wu); },
        {s.uniform({1, 2, 3, 3}, -1, 1)});

  const Tn w_gt = s.uniform({2, 2, 3, 3}, -2, 2);
  check("flow_matching_loss_l2",
        [&](const auto& in) {
          return flowmatch::flow_matching_loss(in[0], w_gt, flowmatch::RobustCost::kL2);
        },
        {s.uniform({2, 2, 3, 3}, -2, 2)});
  check("flow_matching_loss_charbonnier",
        [&](const auto& in) {
          return flowmatch::flow_matching_loss(in[0], w_gt, flowmatch::RobustCost::kCharbonnier);
        },
        {s.uniform({2, 2, 3, 3}, -2, 2)});

  // Unrolled 2-step Euler solve on a 4x4 grid with a time-modulated conv
  // velocity field, differentiated through the weights and the context.
  const Tn w_target = s.uniform({1, 2, 4, 4}, -2, 2);
  check("euler_solve_2_steps_4x4",
        [&](const auto& in) {
          const flowmatch::VelocityFn<T> v = [&](const flowmatch::FlowState<T>& st, const Tn& ctx) {
            const Tn h = ops::conv2d(ops::concat(st.x, ctx, 1), in[0], in[1], 1, 1);
            return ops::scale(ops::sigmoid(h), 1.0 + st.t);
          };
          const Tn field = flowmatch::euler_solve(v, flowmatch::SolverConfig(2), in[2],
                                                  Shape{1, 2, 4, 4});
          return flowmatch::flow_matching_loss(field, w_target, flowmatch::RobustCost::kL2);
        },
        {s.uniform({2, 5, 3, 3}, -0.5, 0.5), s.uniform({2}, -0.5, 0.5),
         s.uniform({1, 3, 4, 4}, -1, 1)});

  // One FiLM residual block of the velocity head on a 4x4 grid.
  model::ModelConfig mini;
  mini.encoder.base_channels = 2;
  mini.head.hidden_channels = 4;
  mini.head.n_residual_blocks = 1;
  mini.head.time_embed_dim = 4;
  mini.discriminator.hidden_dim = 4;
  model::Model<T> net = model::Model<T>::initialize(mini, seed);
  {
    NoGradScope<T> frozen;
    for (const auto& [name, p] : net.params.entries()) {
      auto v = Tn(p).mutable_data();
      const Tn noise = s.uniform(p.shape(), -0.3, 0.3);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
    }
  }
  std::vector<Tn> head_inputs = net.params.tensors("head.");
  head_inputs.push_back(s.uniform({1, 2, 4, 4}, -1, 1));                                 // x_t
  head_inputs.push_back(s.uniform({1, 2 * mini.encoder.feature_channels(), 4, 4}, -1, 1));  // ctx
  const Tn wv = s.uniform({1, 2, 4, 4}, -1, 1);
  const Tn t = Tn(Shape{1}, {0.375});
  check("velocity_head_block_4x4",
        [&](const auto& in) {
          const std::size_t n = in.size();
          return weighted(model::predict_velocity(in[n - 2], t, in[n - 1], net), wv);
        },
        head_inputs);
  return out;
}

std::vector<GradCheckResult> model_gradcheck(std::uint64_t seed, double tolerance) {
  std::vector<GradCheckResult> out;
  data::GenConfig gen;
  gen.image_side = 16;
  gen.rho = 2.0;
  gen.shift.mode = data::ShiftMode::kInvert;
  gen.seed = seed;
  const train::Batch<T> batch = train::make_batch<T>(data::generate_dataset(gen, 2));

  for (model::HeadKind kind : {model::HeadKind::kFlowMatching, model::HeadKind::kDirectRegression}) {
    model::ModelConfig mini;
    mini.encoder.base_channels = 4;
    mini.head.hidden_channels = 4;
    mini.head.n_residual_blocks = 1;
    mini.head.time_embed_dim = 4;
    mini.discriminator.hidden_dim = 4;
    mini.head_kind = kind;
    model::Model<T> net = model::Model<T>::initialize(mini, seed);
    Sampler s(seed + 1);
    {
      NoGradScope<T> frozen;
      for (const auto& [name, p] : net.params.entries()) {
        auto v = Tn(p).mutable_data();
        const Tn noise = s.uniform(p.shape(), -0.1, 0.1);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise[i];
      }
    }
    train::TrainConfig tc;
    tc.n_steps = 2;
    tc.total_iters = 10;
    tc.lambda_dom = 0.5;
    const std::size_t iter = 9;  // past the warm-up, so every term is active
    // alpha = -1 turns the reversal into an identity, so the taped gradient
    // is the true gradient of the whole objective.
    const double alpha = -1.0;
    GradCheckConfig cfg;
    cfg.tolerance = tolerance;
    out.push_back(gradcheck(
        "model_total_loss_" + model::head_kind_name(kind),
        [&](const auto&) { return train::compute_losses(net, batch, tc, iter, alpha).total; },
        net.params.tensors(), cfg));
  }
  return out;
}

}  // namespace homofm::verify
