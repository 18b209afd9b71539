#pragma once

#include <cstddef>
#include <cstdint>

#include "homofm/data/dataset_io.hpp"
#include "homofm/model/params.hpp"

namespace homofm::train {

struct ProbeConfig {
  double train_fraction = 0.7;
  std::size_t epochs = 400;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double accuracy = 0.0;        // held-out, in [0, 1]
  double train_accuracy = 0.0;
  std::size_t n_train = 0;      // feature vectors (two per pair)
  std::size_t n_test = 0;
};

/// Domain-invariance probe. The encoder is frozen; each pair contributes its
/// pooled fine-level source features (label 0) and target features
/// (label 1). Pairs are split train/test, features standardized with the
/// training statistics, and a fresh logistic-regression classifier is
/// trained full-batch with Adam for a fixed budget. Throws MetricError when
/// the dataset has no domain shift (both halves come from one domain) or
/// too few pairs for a split.
ProbeResult domain_probe(const model::Model<float>& model, const data::Dataset& dataset,
                         const ProbeConfig& cfg = {});

}  // namespace homofm::train
