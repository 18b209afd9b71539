#include "homofm/train/ablation.hpp"

#include <algorithm>
#include <iomanip>
#include <limits>
#include <sstream>

#include "homofm/error.hpp"
#include "homofm/train/trainer.hpp"

namespace homofm::train {

AblationAxis parse_ablation_axis(const std::string& name) {
  if (name == "n_steps" || name == "steps") return AblationAxis::kSteps;
  if (name == "grl") return AblationAxis::kGrl;
  if (name == "head") return AblationAxis::kHead;
  throw ConfigError("unknown ablation axis '" + name + "' (n_steps, grl, head)");
}

std::string ablation_axis_name(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kSteps: return "n_steps";
    case AblationAxis::kGrl: return "grl";
    case AblationAxis::kHead: return "head";
  }
  return "unknown";
}

std::vector<AblationVariant> ablation_variants(const RunConfig& base,
                                               const std::vector<AblationAxis>& axes) {
  std::vector<AblationVariant> out;
  auto push = [&out](const std::string& name, RunConfig run) {
    for (const auto& v : out) {
      if (v.name == name) return;
    }
    out.push_back({name, std::move(run)});
  };
  RunConfig fm = base;
  fm.model.head_kind = model::HeadKind::kFlowMatching;
  for (AblationAxis axis : axes) {
    switch (axis) {
      case AblationAxis::kSteps: {
        RunConfig n4 = fm, n1 = fm;
        n4.train.n_steps = 4;
        n1.train.n_steps = 1;
        push("fm_n4", n4);
        push("fm_n1", n1);
        break;
      }
      case AblationAxis::kHead: {
        RunConfig n4 = fm, direct = fm;
        n4.train.n_steps = 4;
        direct.model.head_kind = model::HeadKind::kDirectRegression;
        push("fm_n4", n4);
        push("direct_regression", direct);
        break;
      }
      case AblationAxis::kGrl: {
        RunConfig on = fm, off = fm;
        if (on.train.lambda_dom == 0.0) on.train.lambda_dom = 0.01;
        off.train.lambda_dom = 0.0;
        push("grl_on", on);
        push("grl_off", off);
        break;
      }
    }
  }
  return out;
}

AblationTable ablation_run(const RunConfig& base, const std::vector<AblationAxis>& axes,
                           const std::vector<std::uint64_t>& seeds,
                           const data::Dataset& validation, const AblationOptions& options) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  if (axes.empty()) throw ConfigError("ablation needs at least one axis");
  const auto variants = ablation_variants(base, axes);
  AblationTable table;
  for (std::uint64_t seed : seeds) {
    for (const AblationVariant& variant : variants) {
      AblationRow row;
      row.variant = variant.name;
      row.seed = seed;
      RunConfig run = variant.run;
      run.train.seed = seed;
      run.gen.seed = base.gen.seed + seed;
      try {
        std::optional<std::filesystem::path> dir;
        if (options.out_dir) dir = *options.out_dir / (variant.name + "_seed" + std::to_string(seed));
        const TrainResult trained = train_run(run, dir);
        row.report = evaluate(trained.model, validation, run.train.solver());
        if (options.probe_dataset) {
          row.probe_accuracy = domain_probe(trained.model, *options.probe_dataset, options.probe).accuracy;
        }
        row.seconds = trained.seconds;
        row.ok = true;
      } catch (const Error& e) {
        row.error = e.what();
      }
      if (options.on_row) options.on_row(row);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

std::map<std::string, double> AblationTable::mean_mace() const {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    acc[r.variant].first += r.report.mace;
    acc[r.variant].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

std::map<std::string, double> AblationTable::mean_probe_accuracy() const {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    if (!r.ok || !r.probe_accuracy) continue;
    acc[r.variant].first += *r.probe_accuracy;
    acc[r.variant].second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [k, v] : acc) out[k] = v.first / static_cast<double>(v.second);
  return out;
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "variant,seed,status,mace,auc@3,auc@5,auc@10,auc@20,probe_accuracy,seconds\n";
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
    os << r.variant << "," << r.seed << ",";
    if (r.ok) {
      os << "ok," << r.report.mace;
      for (double tau : kAucThresholds) os << "," << r.report.auc.at(tau);
      os << ",";
      if (r.probe_accuracy) os << *r.probe_accuracy;
      os << "," << r.seconds << "\n";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << "failed: " << msg << ",,,,,,,\n";
    }
  }
  for (const std::string& variant : order) {
    std::size_t n = 0;
    double mace = 0.0, probe = 0.0, secs = 0.0;
    std::size_t n_probe = 0;
    std::map<double, double> auc;
    for (const auto& r : rows) {
      if (r.variant != variant || !r.ok) continue;
      ++n;
      mace += r.report.mace;
      secs += r.seconds;
      for (double tau : kAucThresholds) auc[tau] += r.report.auc.at(tau);
      if (r.probe_accuracy) {
        probe += *r.probe_accuracy;
        ++n_probe;
      }
    }
    os << variant << ",mean," << n << "_ok,";
    if (n > 0) {
      const auto dn = static_cast<double>(n);
      os << mace / dn;
      for (double tau : kAucThresholds) os << "," << auc[tau] / dn;
      os << ",";
      if (n_probe > 0) os << probe / static_cast<double>(n_probe);
      os << "," << secs / dn;
    } else {
      os << ",,,,,,";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace homofm::train
