#include "homofm/train/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "homofm/data/rng.hpp"
#include "homofm/error.hpp"
#include "homofm/model/network.hpp"
#include "homofm/tensor/ops.hpp"
#include "homofm/tensor/optim.hpp"
#include "homofm/train/trainer.hpp"

namespace homofm::train {

namespace {

// Pooled fine features, one row per image: [2n x F], rows 2i (source) and
// 2i + 1 (target).
std::vector<std::vector<double>> pooled_features(const model::Model<float>& net,
                                                 const data::Dataset& ds) {
  NoGradScope<float> frozen;
  std::vector<std::vector<double>> rows;
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < ds.samples.size(); begin += kChunk) {
    const std::size_t end = std::min(ds.samples.size(), begin + kChunk);
    const std::vector<data::PairSample> chunk(ds.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                              ds.samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch<float> batch = make_batch<float>(chunk);
    const Tensor<float> ps = ops::global_avg_pool(model::encode_features(batch.source, net).fine);
    const Tensor<float> pt = ops::global_avg_pool(model::encode_features(batch.target, net).fine);
    const std::size_t f = ps.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      rows.emplace_back(ps.data().begin() + static_cast<std::ptrdiff_t>(i * f),
                        ps.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
      rows.emplace_back(pt.data().begin() + static_cast<std::ptrdiff_t>(i * f),
                        pt.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
    }
  }
  return rows;
}

double accuracy(const Tensor<double>& logits, const std::vector<double>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((logits[i] > 0.0) == (labels[i] > 0.5)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

ProbeResult domain_probe(const model::Model<float>& net, const data::Dataset& dataset,
                         const ProbeConfig& cfg) {
  if (dataset.config.shift.mode == data::ShiftMode::kNone) {
    throw MetricError("probe dataset is unbalanced: source and target share one domain");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw MetricError("probe train_fraction must lie in (0, 1)");
  }
  const std::size_t pairs = dataset.samples.size();
  const auto n_train_pairs =
      static_cast<std::size_t>(std::round(cfg.train_fraction * static_cast<double>(pairs)));
  if (n_train_pairs < 2 || pairs - n_train_pairs < 2) {
    throw MetricError("probe needs at least 2 train and 2 test pairs, dataset has " +
                      std::to_string(pairs));
  }

  const auto rows = pooled_features(net, dataset);
  const std::size_t f = rows.front().size();

  // Deterministic Fisher-Yates over pair indices.
  std::vector<std::size_t> order(pairs);
  std::iota(order.begin(), order.end(), 0);
  data::Rng rng(cfg.seed, 0x70726f6265);  // "probe"
  for (std::size_t i = pairs; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  auto gather = [&](std::size_t from, std::size_t to, std::vector<double>& x,
                    std::vector<double>& y) {
    for (std::size_t k = from; k < to; ++k) {
      for (int domain = 0; domain < 2; ++domain) {
        const auto& row = rows[2 * order[k] + static_cast<std::size_t>(domain)];
        x.insert(x.end(), row.begin(), row.end());
        y.push_back(static_cast<double>(domain));
      }
    }
  };
  std::vector<double> x_train, y_train, x_test, y_test;
  gather(0, n_train_pairs, x_train, y_train);
  gather(n_train_pairs, pairs, x_test, y_test);
  const std::size_t n_train = y_train.size(), n_test = y_test.size();

  // Standardize with training statistics.
  for (std::size_t j = 0; j < f; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n_train; ++i) mean += x_train[i * f + j];
    mean /= static_cast<double>(n_train);
    for (std::size_t i = 0; i < n_train; ++i) sq += std::pow(x_train[i * f + j] - mean, 2);
    const double sd = std::sqrt(sq / static_cast<double>(n_train));
    const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
    for (std::size_t i = 0; i < n_train; ++i) x_train[i * f + j] = (x_train[i * f + j] - mean) * inv;
    for (std::size_t i = 0; i < n_test; ++i) x_test[i * f + j] = (x_test[i * f + j] - mean) * inv;
  }

  const Tensor<double> xt(Shape{n_train, f}, x_train);
  const Tensor<double> xv(Shape{n_test, f}, x_test);
  const Tensor<double> yt(Shape{n_train, 1}, y_train);
  Tensor<double> w = Tensor<double>::zeros({f, 1}, true);
  Tensor<double> b = Tensor<double>::zeros({1, 1}, true);
  Adam<double> adam({w, b}, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  constexpr double kEps = 1e-7;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    GradTape<double> tape;
    Tensor<double> loss;
    {
      TapeScope<double> scope(tape);
      const Tensor<double> p =
          ops::clamp(ops::sigmoid(ops::add(ops::matmul(xt, w), b)), kEps, 1.0 - kEps);
      const Tensor<double> pos = ops::mul(yt, ops::log(p));
      const Tensor<double> neg = ops::mul(ops::add_scalar(ops::scale(yt, -1.0), 1.0),
                                          ops::log(ops::add_scalar(ops::scale(p, -1.0), 1.0)));
      loss = ops::scale(ops::mean(ops::add(pos, neg)), -1.0);
    }
    adam.zero_grad();
    tape.backward(loss);
    adam.step();
  }

  NoGradScope<double> frozen;
  ProbeResult r;
  r.n_train = n_train;
  r.n_test = n_test;
  r.train_accuracy = accuracy(ops::add(ops::matmul(xt, w), b), y_train);
  r.accuracy = accuracy(ops::add(ops::matmul(xv, w), b), y_test);
  return r;
}

}  // namespace homofm::train
