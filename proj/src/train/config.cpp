#include "homofm/train/config.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "homofm/error.hpp"

namespace homofm::train {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "' needs a non-negative integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "' needs a finite number, got '" + v + "'");
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (total_iters == 0) throw ConfigError("total_iters must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lambda_dom >= 0.0)) throw ConfigError("lambda_dom must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (n_steps == 0) throw ConfigError("n_steps must be at least 1");
  if (!(grl_warmup_frac >= 0.0 && grl_warmup_frac < 1.0)) {
    throw ConfigError("grl_warmup_frac must lie in [0, 1)");
  }
  if (!(w_fine >= 0.0) || !(w_coarse >= 0.0)) throw ConfigError("loss weights must be >= 0");
  if (log_every == 0) throw ConfigError("log_every must be positive");
}

std::size_t TrainConfig::warmup_iters() const {
  return static_cast<std::size_t>(std::ceil(grl_warmup_frac * static_cast<double>(total_iters)));
}

double TrainConfig::lambda_effective(std::size_t iter) const {
  return iter < warmup_iters() ? 0.0 : lambda_dom;
}

void RunConfig::validate() const {
  train.validate();
  gen.validate();
  model.validate();
}

std::string rho_cost_name(flowmatch::RobustCost cost) {
  return cost == flowmatch::RobustCost::kL2 ? "l2" : "charbonnier";
}

std::string train_mode_name(TrainMode mode) {
  return mode == TrainMode::kUnrolled ? "unrolled" : "velocity_regression";
}

bool apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  TrainConfig& t = cfg.train;
  data::GenConfig& g = cfg.gen;
  model::ModelConfig& m = cfg.model;
  if (key == "total_iters") t.total_iters = to_u64(key, value);
  else if (key == "batch_size") t.batch_size = to_u64(key, value);
  else if (key == "lr") t.lr = to_double(key, value);
  else if (key == "lambda_dom") t.lambda_dom = to_double(key, value);
  else if (key == "clip_norm") t.clip_norm = to_double(key, value);
  else if (key == "n_steps") t.n_steps = to_u64(key, value);
  else if (key == "grl_warmup_frac") t.grl_warmup_frac = to_double(key, value);
  else if (key == "rho_cost") {
    if (value == "l2") t.rho_cost = flowmatch::RobustCost::kL2;
    else if (value == "charbonnier") t.rho_cost = flowmatch::RobustCost::kCharbonnier;
    else throw ConfigError("rho_cost must be l2 or charbonnier, got '" + value + "'");
  } else if (key == "w_fine") t.w_fine = to_double(key, value);
  else if (key == "w_coarse") t.w_coarse = to_double(key, value);
  else if (key == "seed") t.seed = to_u64(key, value);
  else if (key == "log_every") t.log_every = to_u64(key, value);
  else if (key == "checkpoint_every") t.checkpoint_every = to_u64(key, value);
  else if (key == "train_mode") {
    if (value == "unrolled") t.mode = TrainMode::kUnrolled;
    else if (value == "velocity_regression") t.mode = TrainMode::kVelocityRegression;
    else throw ConfigError("train_mode must be unrolled or velocity_regression");
  } else if (key == "image_side") g.image_side = to_u64(key, value);
  else if (key == "rho") g.rho = to_double(key, value);
  else if (key == "shift_mode") g.shift.mode = data::parse_shift_mode(value);
  else if (key == "gamma") g.shift.gamma = to_double(key, value);
  else if (key == "pattern") g.pattern = data::parse_pattern(value);
  else if (key == "checker_cell") g.checker_cell = to_u64(key, value);
  else if (key == "data_seed") g.seed = to_u64(key, value);
  else if (key == "base_channels") m.encoder.base_channels = to_u64(key, value);
  else if (key == "hidden_channels") m.head.hidden_channels = to_u64(key, value);
  else if (key == "n_residual_blocks") m.head.n_residual_blocks = to_u64(key, value);
  else if (key == "time_embed_dim") m.head.time_embed_dim = to_u64(key, value);
  else if (key == "disc_hidden_dim") m.discriminator.hidden_dim = to_u64(key, value);
  else if (key == "alpha_max") m.discriminator.alpha_max = to_double(key, value);
  else if (key == "alpha_schedule") {
    if (value == "constant") m.discriminator.schedule = model::AlphaSchedule::kConstant;
    else if (value == "ramp") m.discriminator.schedule = model::AlphaSchedule::kLinearRamp;
    else throw ConfigError("alpha_schedule must be constant or ramp");
  } else if (key == "head_kind") m.head_kind = model::parse_head_kind(value);
  else if (key == "direct_hidden") m.direct_hidden = to_u64(key, value);
  else return false;
  return true;
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + line +
                        "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!apply_setting(base, key, value)) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  base.validate();
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "total_iters=" << train.total_iters << "\n"
     << "batch_size=" << train.batch_size << "\n"
     << "lr=" << fmt(train.lr) << "\n"
     << "lambda_dom=" << fmt(train.lambda_dom) << "\n"
     << "clip_norm=" << fmt(train.clip_norm) << "\n"
     << "n_steps=" << train.n_steps << "\n"
     << "grl_warmup_frac=" << fmt(train.grl_warmup_frac) << "\n"
     << "rho_cost=" << rho_cost_name(train.rho_cost) << "\n"
     << "w_fine=" << fmt(train.w_fine) << "\n"
     << "w_coarse=" << fmt(train.w_coarse) << "\n"
     << "seed=" << train.seed << "\n"
     << "log_every=" << train.log_every << "\n"
     << "checkpoint_every=" << train.checkpoint_every << "\n"
     << "train_mode=" << train_mode_name(train.mode) << "\n"
     << "image_side=" << gen.image_side << "\n"
     << "rho=" << fmt(gen.rho) << "\n"
     << "shift_mode=" << data::shift_name(gen.shift.mode) << "\n"
     << "gamma=" << fmt(gen.shift.gamma) << "\n"
     << "pattern=" << data::pattern_name(gen.pattern) << "\n"
     << "checker_cell=" << gen.checker_cell << "\n"
     << "data_seed=" << gen.seed << "\n"
     << "base_channels=" << model.encoder.base_channels << "\n"
     << "hidden_channels=" << model.head.hidden_channels << "\n"
     << "n_residual_blocks=" << model.head.n_residual_blocks << "\n"
     << "time_embed_dim=" << model.head.time_embed_dim << "\n"
     << "disc_hidden_dim=" << model.discriminator.hidden_dim << "\n"
     << "alpha_max=" << fmt(model.discriminator.alpha_max) << "\n"
     << "alpha_schedule="
     << (model.discriminator.schedule == model::AlphaSchedule::kConstant ? "constant" : "ramp")
     << "\n"
     << "head_kind=" << model::head_kind_name(model.head_kind) << "\n"
     << "direct_hidden=" << model.direct_hidden << "\n";
  return os.str();
}

}  // namespace homofm::train
