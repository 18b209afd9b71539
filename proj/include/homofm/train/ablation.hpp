#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "homofm/data/dataset_io.hpp"
#include "homofm/train/config.hpp"
#include "homofm/train/metrics.hpp"
#include "homofm/train/probe.hpp"

namespace homofm::train {

/// Data-seed offsets of the held-out validation and probe sets, far from the
/// per-seed training offsets 0, 1, 2, ...
inline constexpr std::uint64_t kValidationSeedOffset = 1'000'003;
inline constexpr std::uint64_t kProbeSeedOffset = 2'000'003;

enum class AblationAxis {
  kSteps,  // fm_n4 vs fm_n1
  kGrl,    // grl_on vs grl_off
  kHead,   // fm_n4 vs direct_regression
};

AblationAxis parse_ablation_axis(const std::string& name);
std::string ablation_axis_name(AblationAxis axis);

struct AblationVariant {
  std::string name;
  RunConfig run;  // seed-independent part
};

/// Variants covered by `axes`, de-duplicated by name, in first-seen order.
std::vector<AblationVariant> ablation_variants(const RunConfig& base,
                                               const std::vector<AblationAxis>& axes);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport report;
  std::optional<double> probe_accuracy;
  double seconds = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  /// One line per (variant, seed) plus one "mean" line per variant.
  std::string to_csv() const;
  /// Mean MACE over successful seeds of each variant.
  std::map<std::string, double> mean_mace() const;
  std::map<std::string, double> mean_probe_accuracy() const;
};

struct AblationOptions {
  /// Probe each model on this dataset when given (needs a domain shift).
  std::optional<data::Dataset> probe_dataset;
  ProbeConfig probe;
  /// Per-variant checkpoints land in <out_dir>/<variant>_seed<k>/.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const AblationRow&)> on_row;
};

/// For every seed s and variant: train with train.seed = s and
/// data_seed = base data_seed + s (identical across variants), evaluate on
/// `validation` with the variant's own solver. A failing variant is recorded
/// with its error and the sweep continues. Throws ConfigError for an empty
/// seed list.
AblationTable ablation_run(const RunConfig& base, const std::vector<AblationAxis>& axes,
                           const std::vector<std::uint64_t>& seeds,
                           const data::Dataset& validation, const AblationOptions& options = {});

}  // namespace homofm::train
