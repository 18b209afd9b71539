#include "homofm/cli/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "homofm/data/dataset_io.hpp"
#include "homofm/data/pairs.hpp"
#include "homofm/data/raster.hpp"
#include "homofm/error.hpp"
#include "homofm/geometry/homography.hpp"
#include "homofm/model/checkpoint.hpp"
#include "homofm/model/network.hpp"
#include "homofm/train/ablation.hpp"
#include "homofm/train/metrics.hpp"
#include "homofm/train/probe.hpp"
#include "homofm/train/trainer.hpp"
#include "homofm/verify/gradcheck.hpp"

namespace homofm::cli {

namespace {

struct RunOptions {
  std::string config;
  std::vector<std::string> settings;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config, "Run configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", o.settings, "Override one key, e.g. --set lr=1e-3 (repeatable)");
}

train::RunConfig resolve_run(const RunOptions& o) {
  train::RunConfig run;
  if (!o.config.empty()) run = train::load_run_config(o.config);
  for (const std::string& kv : o.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    if (!train::apply_setting(run, kv.substr(0, eq), kv.substr(eq + 1))) {
      throw ConfigError("unknown configuration key '" + kv.substr(0, eq) + "'");
    }
  }
  run.validate();
  return run;
}

std::string dataset_echo(const data::GenConfig& g) {
  std::ostringstream os;
  os << "dataset.image_side=" << g.image_side << "\n"
     << "dataset.rho=" << g.rho << "\n"
     << "dataset.shift_mode=" << data::shift_name(g.shift.mode) << "\n"
     << "dataset.gamma=" << g.shift.gamma << "\n"
     << "dataset.pattern=" << data::pattern_name(g.pattern) << "\n"
     << "dataset.data_seed=" << g.seed << "\n";
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

// gen ---------------------------------------------------------------------

struct GenOptions {
  RunOptions run;
  std::size_t count = 0;
  std::size_t first_index = 0;
  std::string out;
  std::vector<std::string> base_images;
};

int run_gen(const GenOptions& o, std::ostream& out) {
  const train::RunConfig run = resolve_run(o.run);
  const data::GenConfig& cfg = run.gen;
  data::Dataset ds{cfg, {}};
  if (o.base_images.empty()) {
    ds.samples = data::generate_dataset(cfg, o.count, o.first_index);
  } else {
    std::vector<Tensor<float>> bases;
    for (const std::string& path : o.base_images) {
      Tensor<float> img = data::to_rgb(data::read_pnm(path));
      if (img.dim(1) != cfg.image_side || img.dim(2) != cfg.image_side) {
        throw ConfigError("base image '" + path + "' must be " + std::to_string(cfg.image_side) +
                          "x" + std::to_string(cfg.image_side));
      }
      bases.push_back(std::move(img));
    }
    const data::Rng root(cfg.seed);
    for (std::size_t i = 0; i < o.count; ++i) {
      const std::uint64_t index = o.first_index + i;
      data::Rng rng = root.split(index);
      ds.samples.push_back(data::generate_pair(bases[index % bases.size()], cfg, rng));
    }
  }
  data::write_dataset(o.out, ds);
  out << "wrote " << ds.samples.size() << " pairs to " << o.out << "\n";
  return kExitOk;
}

// train -------------------------------------------------------------------

struct TrainOptions {
  RunOptions run;
  std::string out_dir;
  bool quiet = false;
};

int run_train(const TrainOptions& o, std::ostream& out) {
  const train::RunConfig run = resolve_run(o.run);
  train::TrainHooks hooks;
  if (!o.quiet) {
    hooks.on_log = [&out](const train::LogRecord& r) { out << r.to_line() << std::endl; };
  }
  const train::TrainResult result = train::train_run(run, o.out_dir, hooks);
  out << "trained " << run.train.total_iters << " iterations in " << std::fixed
      << std::setprecision(1) << result.seconds << " s\n"
      << "checkpoint " << result.checkpoint.string() << "\n";
  return kExitOk;
}

// eval --------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string dataset;
  std::size_t n_steps = 4;
  std::string report;
  std::string in_domain_report;
};

int run_eval(const EvalOptions& o, std::ostream& out) {
  const model::Checkpoint ck = model::load_checkpoint(o.checkpoint);
  const data::Dataset ds = data::read_dataset(o.dataset);
  train::MetricsReport report =
      train::evaluate(ck.model, ds, flowmatch::SolverConfig(o.n_steps));
  std::ostringstream echo;
  echo << "checkpoint=" << o.checkpoint << "\n"
       << "checkpoint.step=" << ck.step << "\n"
       << "head_kind=" << model::head_kind_name(ck.model.config.head_kind) << "\n"
       << "n_steps=" << o.n_steps << "\n"
       << "dataset=" << o.dataset << "\n"
       << dataset_echo(ds.config);
  std::ostringstream degradation;
  if (!o.in_domain_report.empty()) {
    const train::MetricsReport reference = train::parse_report(read_text(o.in_domain_report));
    const double ratio = reference.mace > 0.0 ? report.mace / reference.mace : 0.0;
    echo << "in_domain_mace=" << reference.mace << "\n"
         << "degradation_px=" << report.mace - reference.mace << "\n"
         << "degradation_ratio=" << ratio << "\n";
    degradation << std::fixed << std::setprecision(3) << "in-domain " << reference.mace
                << " px, degradation " << std::showpos << report.mace - reference.mace
                << std::noshowpos << " px (x" << ratio << ")\n";
  }
  report.config_echo = echo.str();
  out << report.to_pretty() << degradation.str();
  if (!report.nesting_holds()) throw MetricError("AUC nesting violated");
  if (!o.report.empty()) {
    write_text(o.report, report.to_text());
    out << "report " << o.report << "\n";
  }
  return kExitOk;
}

// infer -------------------------------------------------------------------

struct InferOptions {
  std::string checkpoint;
  std::string source;
  std::string target;
  std::string dataset;
  std::size_t index = 0;
  std::size_t n_steps = 4;
  std::string overlay;
};

int run_infer(const InferOptions& o, std::ostream& out) {
  const model::Checkpoint ck = model::load_checkpoint(o.checkpoint);
  Tensor<float> source, target;
  std::optional<geometry::Homography> h_gt;
  if (!o.dataset.empty()) {
    const data::Dataset ds = data::read_dataset(o.dataset);
    if (o.index >= ds.samples.size()) {
      throw ConfigError("--index " + std::to_string(o.index) + " out of range for " +
                        std::to_string(ds.samples.size()) + " pairs");
    }
    const data::PairSample& s = ds.samples[o.index];
    source = s.source;
    target = s.target;
    h_gt = s.h_gt;
  } else {
    source = data::to_rgb(data::read_pnm(o.source));
    target = data::to_rgb(data::read_pnm(o.target));
    if (source.shape() != target.shape()) throw ShapeError("source and target extents differ");
  }
  const std::size_t height = source.dim(1), width = source.dim(2);
  if (height % 8 != 0 || width % 8 != 0) {
    throw ShapeError("image extents must be divisible by 8");
  }

  NoGradScope<float> frozen;
  const auto aligned = model::forward_align(model::stack<float>({source}),
                                            model::stack<float>({target}), ck.model,
                                            flowmatch::SolverConfig(o.n_steps));
  const geometry::Homography& h = aligned.h_pred.front();
  out << "homography " << h.to_text() << "\n";
  const geometry::CornerSet corners = geometry::image_corners(width, height);
  if (h_gt) {
    out << "ace " << geometry::average_corner_error(h, *h_gt, corners) << "\n";
  }

  if (!o.overlay.empty()) {
    // Target blended with the source warped into the target frame; the
    // predicted image outline in red, the ground truth in green.
    const Tensor<float> warped = geometry::warp_image(source, h);
    std::vector<float> blend(target.numel());
    for (std::size_t i = 0; i < blend.size(); ++i) blend[i] = 0.5f * (target[i] + warped[i]);
    Tensor<float> canvas(target.shape(), std::move(blend));
    auto outline = [&](const geometry::Homography& hh) {
      std::vector<geometry::Point2> quad;
      for (const geometry::Point2& p : corners) {
        try {
          quad.push_back(hh.apply(p));
        } catch (const DegeneratePointError&) {
          return quad;
        }
      }
      return quad;
    };
    if (h_gt) data::draw_polygon(canvas, outline(*h_gt), {0.0f, 1.0f, 0.0f});
    data::draw_polygon(canvas, outline(h), {1.0f, 0.0f, 0.0f});
    data::write_pnm(o.overlay, canvas);
    out << "overlay " << o.overlay << "\n";
  }
  return kExitOk;
}

// ablate ------------------------------------------------------------------

struct AblateOptions {
  RunOptions run;
  std::vector<std::string> axes;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t val_count = 64;
  std::size_t probe_count = 0;
  std::string csv;
  std::string out_dir;
};

int run_ablate(const AblateOptions& o, std::ostream& out) {
  const train::RunConfig run = resolve_run(o.run);
  std::vector<train::AblationAxis> axes;
  for (const std::string& a : o.axes) axes.push_back(train::parse_ablation_axis(a));

  data::GenConfig val_cfg = run.gen;
  val_cfg.seed = run.gen.seed + train::kValidationSeedOffset;
  const data::Dataset validation{val_cfg, data::generate_dataset(val_cfg, o.val_count)};

  train::AblationOptions options;
  if (o.probe_count > 0) {
    if (run.gen.shift.mode == data::ShiftMode::kNone) {
      throw ConfigError("--probe-count needs a domain shift (shift_mode != none)");
    }
    data::GenConfig probe_cfg = run.gen;
    probe_cfg.seed = run.gen.seed + train::kProbeSeedOffset;
    options.probe_dataset = data::Dataset{probe_cfg, data::generate_dataset(probe_cfg, o.probe_count)};
  }
  if (!o.out_dir.empty()) options.out_dir = o.out_dir;
  options.on_row = [&out](const train::AblationRow& r) {
    out << r.variant << " seed=" << r.seed;
    if (r.ok) {
      out << " mace=" << r.report.mace;
      if (r.probe_accuracy) out << " probe=" << *r.probe_accuracy;
    } else {
      out << " failed: " << r.error;
    }
    out << std::endl;
  };
  const train::AblationTable table = train::ablation_run(run, axes, o.seeds, validation, options);
  const std::string csv = table.to_csv();
  if (o.csv.empty()) {
    out << csv;
  } else {
    write_text(o.csv, csv);
    out << "table " << o.csv << "\n";
  }
  return kExitOk;
}

// gradcheck ---------------------------------------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 0;
  bool skip_model = false;
};

int run_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  auto results = verify::gradient_suite(o.seed);
  if (!o.skip_model) {
    auto model = verify::model_gradcheck(o.seed);
    results.insert(results.end(), model.begin(), model.end());
  }
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << r.to_line() << "\n";
    if (!r.passed) ++failed;
  }
  out << (failed == 0 ? "all " + std::to_string(results.size()) + " checks passed"
                      : std::to_string(failed) + " of " + std::to_string(results.size()) +
                            " checks failed")
      << "\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

// probe -------------------------------------------------------------------

struct ProbeOptions {
  std::string checkpoint;
  std::string dataset;
  train::ProbeConfig probe;
};

int run_probe(const ProbeOptions& o, std::ostream& out) {
  const model::Checkpoint ck = model::load_checkpoint(o.checkpoint);
  const data::Dataset ds = data::read_dataset(o.dataset);
  const train::ProbeResult r = train::domain_probe(ck.model, ds, o.probe);
  out << "probe_accuracy=" << r.accuracy << "\n"
      << "train_accuracy=" << r.train_accuracy << "\n"
      << "n_train=" << r.n_train << "\n"
      << "n_test=" << r.n_test << "\n";
  return kExitOk;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Homography estimation by flow matching over displacement fields", "homofm"};
  app.require_subcommand(1, 1);

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic pair dataset");
  add_run_options(gen_cmd, gen.run);
  gen_cmd->add_option("--count", gen.count, "Number of pairs")->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--first-index", gen.first_index, "Index of the first pair");
  gen_cmd->add_option("--out", gen.out, "Output dataset file")->required();
  gen_cmd->add_option("--base-image", gen.base_images,
                      "PGM/PPM base image(s) used instead of procedural patterns")
      ->check(CLI::ExistingFile);

  TrainOptions tr;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model from scratch");
  add_run_options(train_cmd, tr.run);
  train_cmd->add_option("--out", tr.out_dir, "Run directory for logs and checkpoints")->required();
  train_cmd->add_flag("--quiet", tr.quiet, "Do not echo log records");

  EvalOptions ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")
      ->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--n-steps", ev.n_steps, "Euler steps")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--report", ev.report, "Write the machine-readable report here");
  eval_cmd->add_option("--in-domain-report", ev.in_domain_report,
                       "Report of the training domain; adds the degradation")
      ->check(CLI::ExistingFile);

  InferOptions inf;
  CLI::App* infer_cmd = app.add_subcommand("infer", "Estimate the homography of one pair");
  infer_cmd->add_option("--checkpoint", inf.checkpoint, "Checkpoint file")
      ->required()->check(CLI::ExistingFile);
  auto* src_opt = infer_cmd->add_option("--source", inf.source, "Source image (PGM/PPM)")
                      ->check(CLI::ExistingFile);
  auto* tgt_opt = infer_cmd->add_option("--target", inf.target, "Target image (PGM/PPM)")
                      ->check(CLI::ExistingFile);
  auto* ds_opt = infer_cmd->add_option("--dataset", inf.dataset, "Take the pair from a dataset")
                     ->check(CLI::ExistingFile);
  infer_cmd->add_option("--index", inf.index, "Pair index within --dataset")->needs(ds_opt);
  src_opt->needs(tgt_opt)->excludes(ds_opt);
  tgt_opt->needs(src_opt)->excludes(ds_opt);
  infer_cmd->add_option("--n-steps", inf.n_steps, "Euler steps")->check(CLI::PositiveNumber);
  infer_cmd->add_option("--overlay", inf.overlay, "Write an overlay PPM here");

  AblateOptions ab;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Train and compare ablation variants");
  add_run_options(ablate_cmd, ab.run);
  ablate_cmd->add_option("--axis", ab.axes, "n_steps, grl or head (repeatable)")
      ->required()->check(CLI::IsMember({"n_steps", "steps", "grl", "head"}));
  ablate_cmd->add_option("--seeds", ab.seeds, "Seeds")->delimiter(',');
  ablate_cmd->add_option("--val-count", ab.val_count, "Validation pairs")->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--probe-count", ab.probe_count, "Probe pairs (0: no probe)");
  ablate_cmd->add_option("--csv", ab.csv, "Write the table here instead of stdout");
  ablate_cmd->add_option("--out", ab.out_dir, "Keep per-variant run directories here");

  GradcheckOptions gc;
  CLI::App* gc_cmd = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc_cmd->add_option("--seed", gc.seed, "Seed of the random inputs");
  gc_cmd->add_flag("--skip-model", gc.skip_model, "Only the op-level checks");

  ProbeOptions pr;
  CLI::App* probe_cmd = app.add_subcommand("probe", "Domain-classification probe on frozen features");
  probe_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")
      ->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--dataset", pr.dataset, "Dataset with a domain shift")
      ->required()->check(CLI::ExistingFile);
  probe_cmd->add_option("--epochs", pr.probe.epochs, "Optimizer steps");
  probe_cmd->add_option("--lr", pr.probe.lr, "Learning rate");
  probe_cmd->add_option("--seed", pr.probe.seed, "Split seed");
  probe_cmd->add_option("--train-fraction", pr.probe.train_fraction, "Fraction of pairs for training");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto subs = app.get_subcommands();
    err << "error: " << e.what() << "\n" << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen(gen, out);
    if (*train_cmd) return run_train(tr, out);
    if (*eval_cmd) return run_eval(ev, out);
    if (*infer_cmd) {
      if (inf.dataset.empty() && inf.source.empty()) {
        err << "error: infer needs --source and --target, or --dataset\n" << infer_cmd->help();
        return kExitUsage;
      }
      return run_infer(inf, out);
    }
    if (*ablate_cmd) return run_ablate(ab, out);
    if (*gc_cmd) return run_gradcheck(gc, out);
    if (*probe_cmd) return run_probe(pr, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace homofm::cli
