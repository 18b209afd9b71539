#include "homofm/model/network.hpp"

#include <cmath>
#include <string>

#include "homofm/data/pairs.hpp"
#include "homofm/error.hpp"
#include "homofm/tensor/ops.hpp"

namespace homofm::model {

namespace {

constexpr double kMaxFrequency = 64.0;
constexpr double kProbabilityFloor = 1e-7;

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const ModelParams<T>& p, const std::string& name,
               std::size_t stride = 1) {
  const Tensor<T>& w = p.get(name + ".w");
  return ops::conv2d(x, w, p.get(name + ".b"), stride, w.dim(2) / 2);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const ModelParams<T>& p, const std::string& name) {
  const Tensor<T>& b = p.get(name + ".b");
  return ops::add(ops::matmul(x, p.get(name + ".w")), ops::reshape(b, {1, b.numel()}));
}

void require_batched(const Shape& s, std::size_t channels, const char* what) {
  if (s.size() != 4 || s[1] != channels) {
    throw ShapeError(std::string(what) + " expects [B x " + std::to_string(channels) +
                     " x H x W], got " + shape_to_string(s));
  }
}

}  // namespace

template <typename T>
FeaturePyramid<T> encode_features(const Tensor<T>& images, const Model<T>& model) {
  require_batched(images.shape(), model.config.encoder.in_channels, "encode_features");
  if (images.dim(2) % 8 != 0 || images.dim(3) % 8 != 0) {
    throw ShapeError("encode_features needs H and W divisible by 8, got " +
                     shape_to_string(images.shape()));
  }
  const ModelParams<T>& p = model.params;
  const Tensor<T> x = ops::add_scalar(images, T(-0.5));
  const Tensor<T> a1 = ops::relu(conv(x, p, "enc.conv1", 2));
  const Tensor<T> a2 = ops::relu(conv(a1, p, "enc.conv2", 2));
  const Tensor<T> f4 = ops::relu(conv(a2, p, "enc.conv3"));
  const Tensor<T> a4 = ops::relu(conv(f4, p, "enc.conv4", 2));
  const Tensor<T> f8 = ops::relu(conv(a4, p, "enc.conv5"));
  const Tensor<T> merged = ops::concat(f4, ops::upsample_bilinear(f8, 2), 1);
  return {ops::relu(conv(merged, p, "enc.fuse")), f8};
}

template <typename T>
Tensor<T> build_context(const Tensor<T>& f_s, const Tensor<T>& f_t) {
  if (f_s.rank() != 4 || f_s.shape() != f_t.shape()) {
    throw ShapeError("build_context needs equal [B x F x h x w] maps, got " +
                     shape_to_string(f_s.shape()) + " and " + shape_to_string(f_t.shape()));
  }
  return ops::concat(f_s, f_t, 1);
}

template <typename T>
Tensor<T> time_embed(const Tensor<T>& t, const Model<T>& model) {
  if (t.rank() != 1) throw ShapeError("time_embed expects t of shape [B]");
  const std::size_t d = model.config.head.time_embed_dim;
  const std::size_t k_count = d / 2;
  std::vector<T> features(t.numel() * d);
  for (std::size_t b = 0; b < t.numel(); ++b) {
    const T tv = t[b];
    if (!(tv >= T{0} && tv <= T{1})) {
      throw DomainError("time " + std::to_string(tv) + " outside [0, 1]");
    }
    for (std::size_t k = 0; k < k_count; ++k) {
      const double exponent =
          k_count > 1 ? static_cast<double>(k) / static_cast<double>(k_count - 1) : 0.0;
      const double omega = std::pow(kMaxFrequency, exponent);
      features[b * d + k] = static_cast<T>(std::sin(omega * tv));
      features[b * d + k_count + k] = static_cast<T>(std::cos(omega * tv));
    }
  }
  const Tensor<T> phi(Shape{t.numel(), d}, std::move(features));
  const Tensor<T> hidden = ops::relu(linear(phi, model.params, "head.temb.l1"));
  return linear(hidden, model.params, "head.temb.l2");
}

template <typename T>
Tensor<T> predict_velocity(const Tensor<T>& x_t, const Tensor<T>& t, const Tensor<T>& context,
                           const Model<T>& model) {
  if (model.config.head_kind != HeadKind::kFlowMatching) {
    throw ConfigError("predict_velocity needs a flow-matching head");
  }
  require_batched(x_t.shape(), 2, "predict_velocity");
  if (context.rank() != 4 || context.dim(0) != x_t.dim(0) || context.dim(2) != x_t.dim(2) ||
      context.dim(3) != x_t.dim(3)) {
    throw ShapeError("x_t " + shape_to_string(x_t.shape()) + " does not match context " +
                     shape_to_string(context.shape()));
  }
  if (t.rank() != 1 || (t.numel() != 1 && t.numel() != x_t.dim(0))) {
    throw ShapeError("t must be [1] or [B], got " + shape_to_string(t.shape()));
  }
  const ModelParams<T>& p = model.params;
  const std::size_t hidden = model.config.head.hidden_channels;
  const Tensor<T> temb = time_embed(t, model);
  Tensor<T> h = ops::relu(conv(ops::concat(x_t, context, 1), p, "head.in"));
  for (std::size_t k = 0; k < model.config.head.n_residual_blocks; ++k) {
    const std::string block = "head.block" + std::to_string(k);
    const Tensor<T> film =
        ops::reshape(linear(temb, p, block + ".film"), {t.numel(), 2 * hidden, 1, 1});
    const Tensor<T> gamma = ops::add_scalar(ops::slice(film, 1, 0, hidden), T{1});
    const Tensor<T> beta = ops::slice(film, 1, hidden, 2 * hidden);
    const Tensor<T> u = ops::add(ops::mul(conv(h, p, block + ".conv"), gamma), beta);
    h = ops::add(h, ops::relu(u));
  }
  return conv(h, p, "head.out");
}

template <typename T>
Tensor<T> predict_direct(const Tensor<T>& context, const Model<T>& model) {
  if (model.config.head_kind != HeadKind::kDirectRegression) {
    throw ConfigError("predict_direct needs a direct-regression head");
  }
  require_batched(context.shape(), 2 * model.config.encoder.feature_channels(), "predict_direct");
  const ModelParams<T>& p = model.params;
  Tensor<T> h = ops::relu(conv(context, p, "head.in"));
  for (std::size_t k = 0; k < model.config.head.n_residual_blocks; ++k) {
    const std::string block = "head.block" + std::to_string(k);
    const Tensor<T> u = ops::add(ops::mul(conv(h, p, block + ".conv"), p.get(block + ".gamma")),
                                 p.get(block + ".beta"));
    h = ops::add(h, ops::relu(u));
  }
  return conv(h, p, "head.out");
}

template <typename T>
Tensor<T> solve_field(const Tensor<T>& context, const Model<T>& model,
                      const flowmatch::SolverConfig& solver) {
  if (model.config.head_kind == HeadKind::kDirectRegression) return predict_direct(context, model);
  const Shape field{context.dim(0), 2, context.dim(2), context.dim(3)};
  const flowmatch::VelocityFn<T> velocity = [&model](const flowmatch::FlowState<T>& s,
                                                     const Tensor<T>& ctx) {
    return predict_velocity(s.x, Tensor<T>(Shape{1}, std::vector<T>{s.t}), ctx, model);
  };
  return flowmatch::euler_solve(velocity, solver, context, field);
}

template <typename T>
Tensor<T> discriminate_domain(const Tensor<T>& feat, const Model<T>& model, T alpha) {
  require_batched(feat.shape(), model.config.encoder.feature_channels(), "discriminate_domain");
  const ModelParams<T>& p = model.params;
  const Tensor<T> pooled = ops::global_avg_pool(ops::grad_reverse(feat, alpha));
  const Tensor<T> hidden = ops::relu(linear(pooled, p, "disc.l1"));
  const Tensor<T> logit = linear(hidden, p, "disc.l2");
  return ops::reshape(ops::sigmoid(logit), {feat.dim(0)});
}

template <typename T>
Tensor<T> domain_loss(const Tensor<T>& p_s, const Tensor<T>& p_t) {
  if (p_s.shape() != p_t.shape()) {
    throw ShapeError("domain_loss: " + shape_to_string(p_s.shape()) + " vs " +
                     shape_to_string(p_t.shape()));
  }
  const T lo = static_cast<T>(kProbabilityFloor), hi = T{1} - lo;
  const Tensor<T> log_s = ops::log(ops::clamp(p_s, lo, hi));
  const Tensor<T> one_minus_t = ops::add_scalar(ops::scale(ops::clamp(p_t, lo, hi), T{-1}), T{1});
  return ops::scale(ops::mean(ops::add(log_s, ops::log(one_minus_t))), T{-1});
}

template <typename T>
geometry::Homography homography_from_field(const Tensor<T>& field) {
  const auto grid_h =
      geometry::fit_homography_from_displacement(geometry::DisplacementField::from_tensor(field));
  return geometry::GridFrame::for_stride(data::kGridStride).to_pixels(grid_h);
}

template <typename T>
AlignResult<T> forward_align(const Tensor<T>& i_s, const Tensor<T>& i_t, const Model<T>& model,
                             const flowmatch::SolverConfig& solver) {
  if (i_s.shape() != i_t.shape()) {
    throw ShapeError("source " + shape_to_string(i_s.shape()) + " and target " +
                     shape_to_string(i_t.shape()) + " differ");
  }
  AlignResult<T> out;
  out.source_features = encode_features(i_s, model);
  out.target_features = encode_features(i_t, model);
  const Tensor<T> context = build_context(out.source_features.fine, out.target_features.fine);
  out.field = solve_field(context, model, solver);
  const std::size_t batch = out.field.dim(0);
  out.h_pred.reserve(batch);
  const Shape one{2, out.field.dim(2), out.field.dim(3)};
  const std::size_t per = shape_numel(one);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto values = out.field.data().subspan(b * per, per);
    out.h_pred.push_back(homography_from_field(Tensor<T>(one, {values.begin(), values.end()})));
  }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw ShapeError("stack needs at least one tensor");
  std::vector<Tensor<T>> parts;
  parts.reserve(items.size());
  for (const Tensor<T>& item : items) {
    Shape s = item.shape();
    s.insert(s.begin(), 1);
    parts.push_back(ops::reshape(item, s));
  }
  return ops::concat(std::span<const Tensor<T>>(parts), 0);
}

#define HOMOFM_INSTANTIATE_NETWORK(T)                                                           \
  template FeaturePyramid<T> encode_features(const Tensor<T>&, const Model<T>&);                \
  template Tensor<T> build_context(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> time_embed(const Tensor<T>&, const Model<T>&);                             \
  template Tensor<T> predict_velocity(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      const Model<T>&);                                         \
  template Tensor<T> predict_direct(const Tensor<T>&, const Model<T>&);                         \
  template Tensor<T> solve_field(const Tensor<T>&, const Model<T>&,                             \
                                 const flowmatch::SolverConfig&);                               \
  template Tensor<T> discriminate_domain(const Tensor<T>&, const Model<T>&, T);                 \
  template Tensor<T> domain_loss(const Tensor<T>&, const Tensor<T>&);                           \
  template geometry::Homography homography_from_field(const Tensor<T>&);                        \
  template AlignResult<T> forward_align(const Tensor<T>&, const Tensor<T>&, const Model<T>&,    \
                                        const flowmatch::SolverConfig&);                        \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);

HOMOFM_INSTANTIATE_NETWORK(float)
HOMOFM_INSTANTIATE_NETWORK(double)

}  // namespace homofm::model
