#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "homofm/error.hpp"
#include "homofm/flowmatch/flow.hpp"
#include "homofm/model/checkpoint.hpp"
#include "homofm/train/ablation.hpp"
#include "homofm/train/config.hpp"
#include "homofm/train/metrics.hpp"
#include "homofm/train/probe.hpp"
#include "homofm/train/trainer.hpp"

using namespace homofm;
using namespace homofm::train;

namespace {

RunConfig tiny_run() {
  RunConfig run;
  run.gen.image_side = 16;
  run.gen.rho = 2.0;
  run.model.encoder.base_channels = 4;
  run.model.head.hidden_channels = 8;
  run.model.head.n_residual_blocks = 1;
  run.model.head.time_embed_dim = 4;
  run.model.discriminator.hidden_dim = 4;
  run.train.total_iters = 6;
  run.train.batch_size = 2;
  run.train.n_steps = 2;
  run.train.log_every = 1;
  run.train.lr = 1e-3;
  return run;
}

// Brute-force midpoint Riemann sum of the empirical CDF over [0, tau].
double riemann_auc(const std::vector<double>& e, double tau, int n = 10000) {
  double area = 0.0;
  for (int k = 0; k < n; ++k) {
    const double t = (k + 0.5) * tau / n;
    const auto below = std::count_if(e.begin(), e.end(), [&](double x) { return x <= t; });
    area += static_cast<double>(below) / static_cast<double>(e.size());
  }
  return 100.0 * area / n;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("total loss examples") {
  TrainConfig cfg;
  cfg.total_iters = 100;
  cfg.w_coarse = 0.0;
  CHECK(total_loss(1.0, 0.0, 2.0, cfg, 50) == doctest::Approx(1.02));
  CHECK(total_loss(1.0, 0.0, 2.0, cfg, 2) == doctest::Approx(1.0));
  CHECK(total_loss(0.0, 0.0, 0.0, cfg, 50) == 0.0);
  cfg.w_coarse = 0.5;
  CHECK(total_loss(1.0, 4.0, 0.0, cfg, 50) == doctest::Approx(3.0));
  const auto t = total_loss(Tensor<double>::scalar(1.0), Tensor<double>::scalar(4.0),
                            Tensor<double>::scalar(2.0), cfg, 50);
  CHECK(t.item() == doctest::Approx(3.02));
}

TEST_CASE("warm-up boundary") {
  for (std::size_t total : {20, 100, 2000, 2001}) {
    TrainConfig cfg;
    cfg.total_iters = total;
    const std::size_t w = cfg.warmup_iters();
    CHECK(w == static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(total))));
    CHECK(cfg.lambda_effective(w - 1) == 0.0);
    CHECK(cfg.lambda_effective(w) == cfg.lambda_dom);
  }
  TrainConfig none;
  none.grl_warmup_frac = 0.0;
  CHECK(none.lambda_effective(0) == none.lambda_dom);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.grl_warmup_frac = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.grl_warmup_frac = 0.05;
  cfg.clip_norm = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.clip_norm = 1.0;
  cfg.n_steps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("run config text") {
  const RunConfig d;
  CHECK(d.train.lambda_dom == 0.01);
  CHECK(d.train.clip_norm == 1.0);
  CHECK(d.train.n_steps == 4);
  CHECK(d.train.grl_warmup_frac == 0.05);
  CHECK(d.train.w_fine == 1.0);
  CHECK(d.train.w_coarse == 0.5);
  const RunConfig r = parse_run_config(
      "# comment\n total_iters = 30\nshift_mode=invert  # trailing\n\nhead_kind=direct_regression\n"
      "rho_cost=charbonnier\ntrain_mode=velocity_regression\nalpha_schedule=constant\n");
  CHECK(r.train.total_iters == 30);
  CHECK(r.gen.shift.mode == data::ShiftMode::kInvert);
  CHECK(r.model.head_kind == model::HeadKind::kDirectRegression);
  CHECK(r.train.rho_cost == flowmatch::RobustCost::kCharbonnier);
  CHECK(r.train.mode == TrainMode::kVelocityRegression);
  CHECK(r.model.discriminator.schedule == model::AlphaSchedule::kConstant);
  const RunConfig again = parse_run_config(r.to_text());
  CHECK(again.to_text() == r.to_text());
  CHECK_THROWS_AS(parse_run_config("learning_rate=1"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("lr=fast"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("lr"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("total_iters=-3"), ConfigError);
  RunConfig cfg;
  CHECK(apply_setting(cfg, "batch_size", "3"));
  CHECK(cfg.train.batch_size == 3);
  CHECK_FALSE(apply_setting(cfg, "nonsense", "3"));
}

TEST_CASE("coarse field halves extents and units") {
  const auto f = Tensor<double>::full({1, 2, 4, 4}, 2.0);
  const auto c = coarse_field(f);
  CHECK(c.shape() == Shape{1, 2, 2, 2});
  for (double v : c.data()) CHECK(v == 1.0);
}

TEST_CASE("auc examples") {
  const std::vector<double> zeros(5, 0.0);
  for (double tau : kAucThresholds) CHECK(auc_at_threshold(zeros, tau) == 100.0);
  const std::vector<double> big{21.0, 30.0};
  for (double tau : kAucThresholds) CHECK(auc_at_threshold(big, tau) == 0.0);
  const std::vector<double> one{2.5};
  CHECK(auc_at_threshold(one, 5.0) == doctest::Approx(50.0));
  CHECK_THROWS_AS(auc_at_threshold(std::vector<double>{}, 3.0), MetricError);
  CHECK_THROWS_AS(auc_at_threshold(one, 0.0), MetricError);
  CHECK_THROWS_AS(auc_at_threshold(std::vector<double>{-1.0}, 3.0), MetricError);
  CHECK_THROWS_AS(auc_at_threshold(std::vector<double>{NAN}, 3.0), MetricError);
}

TEST_CASE("auc agrees with a brute-force Riemann sum and nests") {
  std::mt19937_64 g(3);
  std::uniform_int_distribution<int> len(1, 40);
  std::exponential_distribution<double> ex(0.15);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> e(len(g));
    for (double& x : e) x = ex(g);
    double prev = -1.0;
    for (double tau : kAucThresholds) {
      const double a = auc_at_threshold(e, tau);
      CHECK(std::abs(a - riemann_auc(e, tau)) < 0.01);
      CHECK(a >= prev);
      prev = a;
    }
  }
}

TEST_CASE("metrics report") {
  const auto r = MetricsReport::from_errors({1.0, 2.0, 6.0, 30.0}, "k=v\n");
  CHECK(r.count == 4);
  CHECK(r.mace == doctest::Approx(9.75));
  CHECK(r.nesting_holds());
  CHECK(r.auc.size() == 4);
  CHECK(r.auc.at(3.0) == doctest::Approx(100.0 / (4 * 3.0) * (2.0 + 1.0)));
  const auto parsed = parse_report(r.to_text());
  CHECK(parsed.count == 4);
  CHECK(parsed.mace == doctest::Approx(r.mace));
  CHECK(parsed.ace == r.ace);
  CHECK(parsed.auc.at(20.0) == doctest::Approx(r.auc.at(20.0)));
  CHECK(r.to_pretty().find("MACE") != std::string::npos);
  MetricsReport broken = r;
  broken.mace = 1.0;
  CHECK_FALSE(broken.nesting_holds());
  CHECK_THROWS_AS(parse_report("garbage"), Error);
}

TEST_CASE("untrained model evaluates to the identity") {
  RunConfig run = tiny_run();
  const auto m = model::Model<float>::initialize(run.model, 0);
  run.gen.rho = 0.0;
  const data::Dataset ds{run.gen, data::generate_dataset(run.gen, 4)};
  const auto r = evaluate(m, ds, flowmatch::SolverConfig(2));
  CHECK(r.count == 4);
  CHECK(r.mace < 1e-6);
  CHECK(r.nesting_holds());
}

TEST_CASE("first logged loss equals the zero-prediction loss") {
  const RunConfig run = tiny_run();
  const auto result = train_run(run, std::nullopt);
  REQUIRE(!result.log.empty());
  CHECK(result.log.front().iter == 0);
  const auto samples = data::generate_dataset(run.gen, run.train.batch_size, 0);
  const auto batch = make_batch<double>(samples);
  const auto zero = Tensor<double>::zeros(batch.w_gt.shape());
  const double expect = flowmatch::flow_matching_loss(zero, batch.w_gt, run.train.rho_cost).item();
  CHECK(result.log.front().l_fm == doctest::Approx(expect).epsilon(1e-5));
  CHECK(result.log.front().lambda_eff == 0.0);
  for (const auto& rec : result.log) CHECK(rec.grad_norm <= run.train.clip_norm + 1e-6);
}

TEST_CASE("training is deterministic and writes its artifacts") {
  const RunConfig run = tiny_run();
  const auto dir = std::filesystem::temp_directory_path() / "homofm_test_train";
  std::filesystem::remove_all(dir);
  std::vector<std::string> lines;
  TrainHooks hooks;
  hooks.on_log = [&](const LogRecord& r) { lines.push_back(r.to_line()); };
  const auto a = train_run(run, dir, hooks);
  const auto b = train_run(run, std::nullopt);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].to_line() == b.log[i].to_line());
  CHECK(lines.size() == a.log.size());
  CHECK(std::filesystem::exists(dir / "final.hfmc"));
  CHECK(std::filesystem::exists(dir / "train.log"));
  CHECK(std::filesystem::exists(dir / "run.cfg"));
  CHECK(a.checkpoint == dir / "final.hfmc");
  const auto ck = model::load_checkpoint(a.checkpoint, run.model);
  CHECK(ck.step == run.train.total_iters);
  std::filesystem::remove_all(dir);
}

TEST_CASE("the domain term switches on after warm-up") {
  RunConfig run = tiny_run();
  run.train.total_iters = 10;
  run.train.grl_warmup_frac = 0.3;
  const auto result = train_run(run, std::nullopt);
  for (const auto& r : result.log) {
    if (r.iter < 3) {
      CHECK(r.lambda_eff == 0.0);
      CHECK(r.alpha == 0.0);
    } else {
      CHECK(r.lambda_eff == run.train.lambda_dom);
    }
  }
  CHECK(result.log.back().alpha == doctest::Approx(1.0));
}

TEST_CASE("velocity regression mode and the direct head train") {
  RunConfig run = tiny_run();
  run.train.mode = TrainMode::kVelocityRegression;
  CHECK(train_run(run, std::nullopt).log.size() == run.train.total_iters);
  RunConfig direct = tiny_run();
  direct.model.head_kind = model::HeadKind::kDirectRegression;
  CHECK(train_run(direct, std::nullopt).log.size() == run.train.total_iters);
}

TEST_CASE("a diverging run aborts and keeps the last good parameters") {
  RunConfig run = tiny_run();
  run.train.lr = 1e36;
  run.train.total_iters = 20;
  const auto dir = std::filesystem::temp_directory_path() / "homofm_test_diverge";
  std::filesystem::remove_all(dir);
  try {
    (void)train_run(run, dir);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("iteration") != std::string::npos);
  }
  CHECK(std::filesystem::exists(dir / "last_good.hfmc"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("a trained velocity head depends on time") {
  RunConfig run = tiny_run();
  run.train.total_iters = 100;
  run.train.log_every = 50;
  const auto m = train_run(run, std::nullopt).model;
  const auto s = data::generate_sample(run.gen, 999);
  const auto batch = make_batch<float>({s});
  const auto fs = model::encode_features(batch.source, m).fine;
  const auto ft = model::encode_features(batch.target, m).fine;
  const auto ctx = model::build_context(fs, ft);
  const auto x = Tensor<float>::zeros(batch.w_gt.shape());
  const auto v0 = model::predict_velocity(x, Tensor<float>({1}, {0.0f}), ctx, m);
  const auto v1 = model::predict_velocity(x, Tensor<float>({1}, {0.75f}), ctx, m);
  double diff = 0.0;
  for (std::size_t i = 0; i < v0.numel(); ++i) diff += std::abs(v0[i] - v1[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("domain probe preconditions and bookkeeping") {
  RunConfig run = tiny_run();
  const auto m = model::Model<float>::initialize(run.model, 0);
  const data::Dataset same{run.gen, data::generate_dataset(run.gen, 10)};
  CHECK_THROWS_AS(domain_probe(m, same), MetricError);
  run.gen.shift.mode = data::ShiftMode::kInvert;
  const data::Dataset two{run.gen, data::generate_dataset(run.gen, 20)};
  ProbeConfig pc;
  pc.epochs = 50;
  const auto r = domain_probe(m, two, pc);
  CHECK(r.n_train + r.n_test == 40);
  CHECK(r.n_train == 28);
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
  // Even a random encoder tells inverted colours apart better than chance.
  CHECK(r.train_accuracy > 0.6);
  const data::Dataset tiny{run.gen, data::generate_dataset(run.gen, 1)};
  CHECK_THROWS_AS(domain_probe(m, tiny), MetricError);
}

TEST_CASE("ablation variants") {
  const RunConfig base = tiny_run();
  const auto steps = ablation_variants(base, {AblationAxis::kSteps});
  REQUIRE(steps.size() == 2);
  CHECK(steps[0].name == "fm_n4");
  CHECK(steps[0].run.train.n_steps == 4);
  CHECK(steps[1].name == "fm_n1");
  CHECK(steps[1].run.train.n_steps == 1);
  const auto both = ablation_variants(base, {AblationAxis::kSteps, AblationAxis::kHead});
  CHECK(both.size() == 3);
  CHECK(both[2].run.model.head_kind == model::HeadKind::kDirectRegression);
  const auto grl = ablation_variants(base, {AblationAxis::kGrl});
  REQUIRE(grl.size() == 2);
  CHECK(grl[0].run.train.lambda_dom > 0.0);
  CHECK(grl[1].run.train.lambda_dom == 0.0);
  CHECK(parse_ablation_axis("head") == AblationAxis::kHead);
  CHECK_THROWS_AS(parse_ablation_axis("depth"), ConfigError);
}

TEST_CASE("ablation table has a row per variant and seed plus means") {
  RunConfig base = tiny_run();
  base.train.total_iters = 2;
  const data::Dataset val{base.gen, data::generate_dataset(base.gen, 4, 500)};
  std::size_t seen = 0;
  AblationOptions opt;
  opt.on_row = [&](const AblationRow&) { ++seen; };
  const auto table = ablation_run(base, {AblationAxis::kSteps}, {0, 1}, val, opt);
  CHECK(table.rows.size() == 4);
  CHECK(seen == 4);
  for (const auto& r : table.rows) CHECK(r.ok);
  const auto means = table.mean_mace();
  CHECK(means.size() == 2);
  const std::string csv = table.to_csv();
  std::size_t lines = 0, mean_lines = 0;
  std::istringstream in(csv);
  for (std::string l; std::getline(in, l);) {
    ++lines;
    mean_lines += l.find("mean") != std::string::npos;
  }
  CHECK(lines == 1 + 4 + 2);
  CHECK(mean_lines == 2);
  CHECK_THROWS_AS(ablation_run(base, {AblationAxis::kSteps}, {}, val), ConfigError);
}

TEST_CASE("a failing variant is recorded without aborting the sweep") {
  RunConfig base = tiny_run();
  base.train.total_iters = 3;
  base.train.lr = 1e36;
  const data::Dataset val{base.gen, data::generate_dataset(base.gen, 2, 500)};
  const auto table = ablation_run(base, {AblationAxis::kHead}, {0}, val);
  CHECK(table.rows.size() == 2);
  for (const auto& r : table.rows) {
    CHECK_FALSE(r.ok);
    CHECK(r.error.find("iteration") != std::string::npos);
  }
  CHECK(table.mean_mace().empty());
}

}
