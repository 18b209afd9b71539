#pragma once

// Flat key=value run configuration. One key per line, '#' starts a comment,
// unknown keys and malformed values are ConfigErrors.
//
// training:   total_iters batch_size lr lambda_dom clip_norm n_steps
//             grl_warmup_frac rho_cost(l2|charbonnier) w_fine w_coarse seed
//             log_every checkpoint_every train_mode(unrolled|velocity_regression)
// data:       image_side rho shift_mode gamma pattern checker_cell data_seed
// model:      base_channels hidden_channels n_residual_blocks time_embed_dim
//             disc_hidden_dim alpha_max alpha_schedule(constant|ramp)
//             head_kind(fm|direct_regression) direct_hidden

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "homofm/data/pairs.hpp"
#include "homofm/flowmatch/flow.hpp"
#include "homofm/model/config.hpp"

namespace homofm::train {

enum class TrainMode {
  kUnrolled,            // losses on w_N of the differentiable N-step solve
  kVelocityRegression,  // losses on v(t w_gt, t, C) at a random t per sample
};

struct TrainConfig {
  std::size_t total_iters = 2000;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double lambda_dom = 0.01;
  double clip_norm = 1.0;
  std::size_t n_steps = 4;
  double grl_warmup_frac = 0.05;
  flowmatch::RobustCost rho_cost = flowmatch::RobustCost::kL2;
  double w_fine = 1.0;
  double w_coarse = 0.5;
  std::uint64_t seed = 0;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;  // 0: only at the end
  TrainMode mode = TrainMode::kUnrolled;

  /// 0 <= grl_warmup_frac < 1, clip_norm > 0, N >= 1, positive sizes.
  void validate() const;
  /// ceil(grl_warmup_frac * total_iters)
  std::size_t warmup_iters() const;
  /// 0 inside the warm-up window, lambda_dom afterwards.
  double lambda_effective(std::size_t iter) const;
  flowmatch::SolverConfig solver() const { return flowmatch::SolverConfig(n_steps); }
};

struct RunConfig {
  TrainConfig train;
  data::GenConfig gen;
  model::ModelConfig model;

  void validate() const;
  std::string to_text() const;
};

/// Applies the keys in `text` on top of `base`.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Applies a single key=value assignment; returns false for unknown keys.
bool apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

std::string rho_cost_name(flowmatch::RobustCost cost);
std::string train_mode_name(TrainMode mode);

}  // namespace homofm::train
