#pragma once

// Forward passes. Images and fields are batched:
//   images  [B x 3 x H x W]             (H, W divisible by 8)
//   fine    [B x F x H/4 x W/4]         F = 2 * base_channels
//   coarse  [B x F x H/8 x W/8]
//   fields  [B x 2 x H/4 x W/4]         displacement in grid units
// Every function records onto the active GradTape when parameters require
// gradients.

#include <vector>

#include "homofm/flowmatch/flow.hpp"
#include "homofm/geometry/homography.hpp"
#include "homofm/model/params.hpp"

namespace homofm::model {

template <typename T>
struct FeaturePyramid {
  Tensor<T> fine;    // stride 4, coarse level fused in
  Tensor<T> coarse;  // stride 8
};

/// Throws ShapeError unless the input is [B x C_in x H x W] with H, W
/// divisible by 8.
template <typename T>
FeaturePyramid<T> encode_features(const Tensor<T>& images, const Model<T>& model);

/// [f_s ; f_t] along channels. Throws ShapeError on mismatched extents.
template <typename T>
Tensor<T> build_context(const Tensor<T>& f_s, const Tensor<T>& f_t);

/// Sinusoidal features of t at geometric frequencies followed by a two-layer
/// MLP. `t` is [B] (or [1] to share one time across the batch); the result is
/// [B x time_embed_dim]. Throws DomainError if any t is outside [0, 1].
template <typename T>
Tensor<T> time_embed(const Tensor<T>& t, const Model<T>& model);

/// v(x_t, t, C): x_t [B x 2 x h x w], t [B] or [1], context [B x 2F x h x w].
template <typename T>
Tensor<T> predict_velocity(const Tensor<T>& x_t, const Tensor<T>& t, const Tensor<T>& context,
                           const Model<T>& model);

/// One-shot field regression from the context (ablation head).
template <typename T>
Tensor<T> predict_direct(const Tensor<T>& context, const Model<T>& model);

/// w_N from the context: the N-step Euler solve for the flow-matching head,
/// the one-shot prediction for the direct head.
template <typename T>
Tensor<T> solve_field(const Tensor<T>& context, const Model<T>& model,
                      const flowmatch::SolverConfig& solver);

/// D(GRL_alpha(feat)): global average pool, MLP, sigmoid. [B] probabilities.
template <typename T>
Tensor<T> discriminate_domain(const Tensor<T>& feat, const Model<T>& model, T alpha);

/// -mean_b [log p_s + log(1 - p_t)], probabilities clamped to
/// [1e-7, 1 - 1e-7].
template <typename T>
Tensor<T> domain_loss(const Tensor<T>& p_s, const Tensor<T>& p_t);

/// Pixel homography from one grid-unit field [2 x h x w] on the stride-4
/// grid.
template <typename T>
geometry::Homography homography_from_field(const Tensor<T>& field);

template <typename T>
struct AlignResult {
  Tensor<T> field;                              // [B x 2 x h x w]
  std::vector<geometry::Homography> h_pred;     // per sample, pixels
  FeaturePyramid<T> source_features;
  FeaturePyramid<T> target_features;
};

/// Full pipeline: encode both images, build the context, solve for w_N and
/// fit one homography per sample.
template <typename T>
AlignResult<T> forward_align(const Tensor<T>& i_s, const Tensor<T>& i_t, const Model<T>& model,
                             const flowmatch::SolverConfig& solver);

/// Stacks [C x H x W] images into [B x C x H x W].
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& items);

}  // namespace homofm::model
