#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "homofm/data/dataset_io.hpp"
#include "homofm/flowmatch/flow.hpp"
#include "homofm/model/params.hpp"

namespace homofm::train {

/// 100/tau * integral_0^tau F(t) dt with F the empirical CDF of `errors`,
/// evaluated exactly: 100/(n tau) * sum_i max(0, tau - e_i). Throws
/// MetricError for an empty list, tau <= 0 or negative/non-finite errors.
double auc_at_threshold(std::span<const double> errors, double tau);

inline constexpr double kAucThresholds[] = {3.0, 5.0, 10.0, 20.0};

struct MetricsReport {
  std::vector<double> ace;       // per sample, pixels
  double mace = 0.0;
  std::map<double, double> auc;  // tau -> percent
  std::size_t count = 0;
  std::string config_echo;       // free-form key=value lines

  /// MACE and AUC@{3,5,10,20} from `ace`.
  static MetricsReport from_errors(std::vector<double> ace, std::string config_echo = "");
  /// AUC@3 <= AUC@5 <= AUC@10 <= AUC@20 and MACE == mean(ace).
  bool nesting_holds() const;

  /// Human-readable summary.
  std::string to_pretty() const;
  /// key=value header, blank line, "index,ace" table.
  std::string to_text() const;
};

MetricsReport parse_report(const std::string& text);

/// Forward-aligns every sample with frozen parameters and scores the
/// predicted homography with the average corner error over the image
/// corners.
MetricsReport evaluate(const model::Model<float>& model, const data::Dataset& dataset,
                       const flowmatch::SolverConfig& solver, std::size_t batch_size = 16);

}  // namespace homofm::train
