#include "homofm/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "homofm/data/rng.hpp"
#include "homofm/error.hpp"
#include "homofm/model/checkpoint.hpp"
#include "homofm/tensor/ops.hpp"
#include "homofm/tensor/optim.hpp"

namespace homofm::train {

double total_loss(double l_fm_fine, double l_fm_coarse, double l_dom, const TrainConfig& cfg,
                  std::size_t iter) {
  return cfg.w_fine * l_fm_fine + cfg.w_coarse * l_fm_coarse +
         cfg.lambda_effective(iter) * l_dom;
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& l_fm_fine, const Tensor<T>& l_fm_coarse,
                     const Tensor<T>& l_dom, const TrainConfig& cfg, std::size_t iter) {
  Tensor<T> total = ops::add(ops::scale(l_fm_fine, static_cast<T>(cfg.w_fine)),
                             ops::scale(l_fm_coarse, static_cast<T>(cfg.w_coarse)));
  const double lambda = cfg.lambda_effective(iter);
  if (lambda != 0.0) total = ops::add(total, ops::scale(l_dom, static_cast<T>(lambda)));
  return total;
}

template <typename T>
Tensor<T> coarse_field(const Tensor<T>& field) {
  return ops::scale(ops::avg_pool2d(field, 2), T(0.5));
}

template <typename T>
Batch<T> make_batch(const std::vector<data::PairSample>& samples) {
  std::vector<Tensor<T>> src, tgt, w;
  for (const data::PairSample& s : samples) {
    auto convert = [](const Tensor<float>& x) {
      return Tensor<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
    };
    src.push_back(convert(s.source));
    tgt.push_back(convert(s.target));
    w.push_back(convert(s.w_gt));
  }
  NoGradScope<T> no_grad;
  return {model::stack(src), model::stack(tgt), model::stack(w)};
}

template <typename T>
StepLosses<T> compute_losses(const model::Model<T>& net, const Batch<T>& batch,
                             const TrainConfig& cfg, std::size_t iter, double alpha,
                             const std::vector<T>& t_draws) {
  const auto fs = model::encode_features(batch.source, net);
  const auto ft = model::encode_features(batch.target, net);
  const Tensor<T> context = model::build_context(fs.fine, ft.fine);

  Tensor<T> prediction;
  const bool regression = cfg.mode == TrainMode::kVelocityRegression &&
                          net.config.head_kind == model::HeadKind::kFlowMatching;
  if (regression) {
    const std::size_t b = batch.w_gt.dim(0);
    if (t_draws.size() != b) throw ConfigError("velocity regression needs one t per sample");
    const Tensor<T> t(Shape{b}, t_draws);
    const Tensor<T> x_t = ops::mul(batch.w_gt, Tensor<T>(Shape{b, 1, 1, 1}, t_draws));
    prediction = model::predict_velocity(x_t, t, context, net);
  } else {
    prediction = model::solve_field(context, net, cfg.solver());
  }

  StepLosses<T> out;
  out.fine = flowmatch::flow_matching_loss(prediction, batch.w_gt, cfg.rho_cost);
  out.coarse =
      flowmatch::flow_matching_loss(coarse_field(prediction), coarse_field(batch.w_gt), cfg.rho_cost);
  const T a = static_cast<T>(alpha);
  out.dom = model::domain_loss(model::discriminate_domain(fs.fine, net, a),
                               model::discriminate_domain(ft.fine, net, a));
  out.total = total_loss(out.fine, out.coarse, out.dom, cfg, iter);
  return out;
}

std::string LogRecord::to_line() const {
  std::ostringstream os;
  os << "iter=" << iter << " loss=" << loss << " l_fm=" << l_fm << " l_coarse=" << l_coarse
     << " l_dom=" << l_dom << " lambda=" << lambda_eff << " alpha=" << alpha
     << " grad_norm=" << grad_norm << " grad_norm_raw=" << grad_norm_raw;
  return os.str();
}

TrainResult train_run(const RunConfig& run, const std::optional<std::filesystem::path>& out_dir,
                      const TrainHooks& hooks) {
  run.validate();
  const TrainConfig& cfg = run.train;
  const auto start = std::chrono::steady_clock::now();

  std::ofstream log_file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream(*out_dir / "run.cfg") << run.to_text();
    log_file.open(*out_dir / "train.log");
    if (!log_file) throw ConfigError("cannot write " + (*out_dir / "train.log").string());
  }

  TrainResult result;
  result.model = model::Model<float>::initialize(run.model, cfg.seed);
  model::Model<float>& net = result.model;
  std::vector<Tensor<float>> params = net.params.tensors();
  Adam<float> adam(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  const data::Rng time_rng = data::Rng(cfg.seed).split(0x74696d65);  // "time"

  for (std::size_t iter = 0; iter < cfg.total_iters; ++iter) {
    const auto samples =
        data::generate_dataset(run.gen, cfg.batch_size, static_cast<std::uint64_t>(iter) * cfg.batch_size);
    const Batch<float> batch = make_batch<float>(samples);
    std::vector<float> t_draws;
    if (cfg.mode == TrainMode::kVelocityRegression) {
      data::Rng rng = time_rng.split(iter);
      for (std::size_t b = 0; b < cfg.batch_size; ++b) t_draws.push_back(static_cast<float>(rng.uniform()));
    }
    const double alpha = model::grl_alpha(run.model.discriminator, iter, cfg.total_iters,
                                          cfg.warmup_iters());

    const auto abort = [&](const std::string& why) {
      if (out_dir) model::save_checkpoint(*out_dir / "last_good.hfmc", net, iter);
      throw TrainingError(why, iter);
    };
    GradTape<float> tape;
    StepLosses<float> losses;
    try {
      TapeScope<float> scope(tape);
      losses = compute_losses(net, batch, cfg, iter, alpha, t_draws);
    } catch (const NumericError& e) {
      abort(e.what());
    }
    const double loss = losses.total.item();
    if (!std::isfinite(loss)) abort("non-finite loss " + std::to_string(loss));
    net.params.zero_grad();
    tape.backward(losses.total);
    const ClipResult clip = clip_global_norm(params, cfg.clip_norm);
    adam.step();

    const bool last = iter + 1 == cfg.total_iters;
    if (iter % cfg.log_every == 0 || last) {
      LogRecord rec;
      rec.iter = iter;
      rec.loss = loss;
      rec.l_fm = losses.fine.item();
      rec.l_coarse = losses.coarse.item();
      rec.l_dom = losses.dom.item();
      rec.lambda_eff = cfg.lambda_effective(iter);
      rec.alpha = alpha;
      rec.grad_norm = clip.norm_after;
      rec.grad_norm_raw = clip.norm_before;
      result.log.push_back(rec);
      if (log_file) log_file << rec.to_line() << "\n" << std::flush;
      if (hooks.on_log) hooks.on_log(rec);
    }
    if (out_dir && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 && !last) {
      model::save_checkpoint(*out_dir / ("step_" + std::to_string(iter + 1) + ".hfmc"), net,
                             iter + 1);
    }
  }
  net.params.zero_grad();
  if (out_dir) {
    result.checkpoint = *out_dir / "final.hfmc";
    model::save_checkpoint(result.checkpoint, net, cfg.total_iters);
  }
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template Tensor<float> total_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                  const TrainConfig&, std::size_t);
template Tensor<double> total_loss(const Tensor<double>&, const Tensor<double>&,
                                   const Tensor<double>&, const TrainConfig&, std::size_t);
template Tensor<float> coarse_field(const Tensor<float>&);
template Tensor<double> coarse_field(const Tensor<double>&);
template Batch<float> make_batch(const std::vector<data::PairSample>&);
template Batch<double> make_batch(const std::vector<data::PairSample>&);
template StepLosses<float> compute_losses(const model::Model<float>&, const Batch<float>&,
                                          const TrainConfig&, std::size_t, double,
                                          const std::vector<float>&);
template StepLosses<double> compute_losses(const model::Model<double>&, const Batch<double>&,
                                           const TrainConfig&, std::size_t, double,
                                           const std::vector<double>&);

}  // namespace homofm::train
