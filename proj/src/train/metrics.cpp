#include "homofm/train/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "homofm/error.hpp"
#include "homofm/model/network.hpp"
#include "homofm/train/trainer.hpp"

namespace homofm::train {

double auc_at_threshold(std::span<const double> errors, double tau) {
  if (errors.empty()) throw MetricError("AUC of an empty error list");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw MetricError("AUC threshold must be positive");
  double area = 0.0;
  for (double e : errors) {
    if (!(e >= 0.0) || !std::isfinite(e)) throw MetricError("corner errors must be finite and >= 0");
    area += std::max(0.0, tau - e);
  }
  return 100.0 * area / (static_cast<double>(errors.size()) * tau);
}

MetricsReport MetricsReport::from_errors(std::vector<double> ace, std::string config_echo) {
  if (ace.empty()) throw MetricError("report needs at least one sample");
  MetricsReport r;
  r.count = ace.size();
  r.mace = std::accumulate(ace.begin(), ace.end(), 0.0) / static_cast<double>(ace.size());
  for (double tau : kAucThresholds) r.auc[tau] = auc_at_threshold(ace, tau);
  r.ace = std::move(ace);
  r.config_echo = std::move(config_echo);
  return r;
}

bool MetricsReport::nesting_holds() const {
  double previous = -1.0;
  for (double tau : kAucThresholds) {
    const auto it = auc.find(tau);
    if (it == auc.end() || it->second < previous) return false;
    previous = it->second;
  }
  if (ace.size() != count || ace.empty()) return false;
  const double mean = std::accumulate(ace.begin(), ace.end(), 0.0) / static_cast<double>(count);
  return std::abs(mean - mace) <= 1e-12 * std::max(1.0, std::abs(mean));
}

std::string MetricsReport::to_pretty() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "samples   " << count << "\n";
  os << "MACE      " << mace << " px\n";
  for (const auto& [tau, value] : auc) {
    os << "AUC@" << std::setw(2) << std::left << static_cast<int>(tau) << std::right << "    "
       << std::setprecision(2) << value << " %\n"
       << std::setprecision(3);
  }
  return os.str();
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << "count=" << count << "\n";
  os << "mace=" << mace << "\n";
  for (const auto& [tau, value] : auc) os << "auc@" << static_cast<int>(tau) << "=" << value << "\n";
  std::istringstream echo(config_echo);
  std::string line;
  while (std::getline(echo, line)) {
    if (!line.empty()) os << "config." << line << "\n";
  }
  os << "\nindex,ace\n";
  for (std::size_t i = 0; i < ace.size(); ++i) os << i << "," << ace[i] << "\n";
  return os.str();
}

MetricsReport parse_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::vector<double> ace;
  std::string echo;
  bool in_table = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line == "index,ace") {
      in_table = true;
      continue;
    }
    if (in_table) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw FormatError("bad report row: " + line, 0);
      ace.push_back(std::stod(line.substr(comma + 1)));
    } else if (line.rfind("config.", 0) == 0) {
      echo += line.substr(7) + "\n";
    }
  }
  return MetricsReport::from_errors(std::move(ace), std::move(echo));
}

MetricsReport evaluate(const model::Model<float>& net, const data::Dataset& dataset,
                       const flowmatch::SolverConfig& solver, std::size_t batch_size) {
  if (dataset.samples.empty()) throw MetricError("cannot evaluate an empty dataset");
  if (batch_size == 0) batch_size = 1;
  NoGradScope<float> frozen;
  const std::size_t side = dataset.config.image_side;
  const geometry::CornerSet corners = geometry::image_corners(side, side);
  std::vector<double> ace;
  ace.reserve(dataset.samples.size());
  for (std::size_t begin = 0; begin < dataset.samples.size(); begin += batch_size) {
    const std::size_t end = std::min(dataset.samples.size(), begin + batch_size);
    const std::vector<data::PairSample> chunk(dataset.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                              dataset.samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Batch<float> batch = make_batch<float>(chunk);
    const auto aligned = model::forward_align(batch.source, batch.target, net, solver);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      ace.push_back(geometry::average_corner_error(aligned.h_pred[i], chunk[i].h_gt, corners));
    }
  }
  std::ostringstream echo;
  echo << "image_side=" << side << "\nrho=" << dataset.config.rho
       << "\nshift_mode=" << data::shift_name(dataset.config.shift.mode)
       << "\npattern=" << data::pattern_name(dataset.config.pattern)
       << "\ndata_seed=" << dataset.config.seed << "\nn_steps=" << solver.n_steps()
       << "\nhead_kind=" << model::head_kind_name(net.config.head_kind) << "\n";
  return MetricsReport::from_errors(std::move(ace), echo.str());
}

}  // namespace homofm::train
