#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "homofm/data/pairs.hpp"
#include "homofm/model/network.hpp"
#include "homofm/train/config.hpp"

namespace homofm::train {

/// w_f * fine + w_c * coarse + lambda_eff(iter) * dom.
double total_loss(double l_fm_fine, double l_fm_coarse, double l_dom, const TrainConfig& cfg,
                  std::size_t iter);

/// Differentiable form of the same combination.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_fm_fine, const Tensor<T>& l_fm_coarse,
                     const Tensor<T>& l_dom, const TrainConfig& cfg, std::size_t iter);

/// Field at the 2x-downsampled coarse grid, in coarse grid units.
template <typename T>
Tensor<T> coarse_field(const Tensor<T>& field);

template <typename T>
struct Batch {
  Tensor<T> source;  // [B x 3 x S x S]
  Tensor<T> target;
  Tensor<T> w_gt;    // [B x 2 x S/4 x S/4]
};

template <typename T>
Batch<T> make_batch(const std::vector<data::PairSample>& samples);

template <typename T>
struct StepLosses {
  Tensor<T> total;
  Tensor<T> fine;
  Tensor<T> coarse;
  Tensor<T> dom;
};

/// Forward pass of one training iteration; records onto the active tape.
/// `t_draws` supplies per-sample times for velocity-regression mode.
template <typename T>
StepLosses<T> compute_losses(const model::Model<T>& model, const Batch<T>& batch,
                             const TrainConfig& cfg, std::size_t iter, double alpha,
                             const std::vector<T>& t_draws = {});

struct LogRecord {
  std::size_t iter = 0;
  double loss = 0.0;
  double l_fm = 0.0;     // fine-level flow-matching loss
  double l_coarse = 0.0;
  double l_dom = 0.0;
  double lambda_eff = 0.0;
  double alpha = 0.0;
  double grad_norm = 0.0;       // after clipping
  double grad_norm_raw = 0.0;   // before clipping

  std::string to_line() const;
};

struct TrainResult {
  model::Model<float> model;
  std::vector<LogRecord> log;
  std::filesystem::path checkpoint;  // empty when no out_dir was given
  double seconds = 0.0;
};

struct TrainHooks {
  /// Called after every logged record.
  std::function<void(const LogRecord&)> on_log;
};

/// Trains from scratch on an endless stream of generated pairs: batch i
/// uses samples [i*B, (i+1)*B) of the dataset defined by run.gen. Writes
/// train.log, checkpoints (final.hfmc, step_<k>.hfmc) and run.cfg to
/// `out_dir` when given. A non-finite loss aborts with TrainingError before
/// the update; the untouched parameters are saved as last_good.hfmc.
TrainResult train_run(const RunConfig& run, const std::optional<std::filesystem::path>& out_dir,
                      const TrainHooks& hooks = {});

}  // namespace homofm::train
