// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include "sfanet/checkpoint.hpp"
#include "sfanet/evaluation.hpp"
#include "sfanet/gradcheck.hpp"
#include "sfanet/ops.hpp"
#include "sfanet/synth.hpp"
#include "sfanet/trainer.hpp"

#include "oracles.hpp"
#include "test_util.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <set>
#include <sstream>

using namespace sfanet;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt_double(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

PointAnnotation random_annotation(std::mt19937_64& rng, int max_size, int max_heads) {
  std::uniform_int_distribution<int> size(1, max_size), heads(0, max_heads), edge(0, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointAnnotation a;
  a.width = size(rng);
  a.height = size(rng);
  const int n = heads(rng);
  for (int i = 0; i < n; ++i) {
    Point p{u(rng) * (a.width - 1), u(rng) * (a.height - 1)};
    // Pin some heads to the border.
    switch (edge(rng)) {
      case 0: p.x = 0.0; break;
      case 1: p.x = a.width - 1; break;
      case 2: p.y = 0.0; break;
      case 3: p.y = a.height - 1; break;
      default: break;
    }
    a.points.push_back(p);
  }
  return a;
}

ModelConfig mini(bool amp = true) {
  ModelConfig c;
  c.width_multiplier = 0.125;
  c.amp_enabled = amp;
  return c;
}

Outcome gradient_suite() {
  GradCheckOptions opts;
  opts.coordinates = 50;
  const auto t0 = Clock::now();
  const auto results = run_gradcheck_suite(opts);
  const double secs = seconds_since(t0);
  bool ok = secs < 300.0;
  double worst = 0.0;
  std::string failed;
  int min_checked = 1 << 30;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    min_checked = std::min(min_checked, r.checked);
    if (!r.passed) failed += " " + r.name;
    ok = ok && r.passed && r.checked >= 50;
  }
  return {ok, std::to_string(results.size()) + " checks, >= " + std::to_string(min_checked) +
                  " coords each, max rel err " + fmt_double(worst) + ", " + fmt_double(secs) + " s" +
                  (failed.empty() ? "" : "; failed:" + failed)};
}

Outcome count_conservation() {
  std::mt19937_64 rng(2);
  double worst_count = 0.0, worst_half = 0.0;
  for (int i = 0; i < 1000; ++i) {
    auto a = random_annotation(rng, 256, 50);
    const auto d = render_density(a);
    worst_count = std::max(worst_count, std::abs(d.sum() - static_cast<double>(a.count())));
    a.width += a.width % 2;
    a.height += a.height % 2;
    const auto even = render_density(a);
    worst_half = std::max(worst_half, std::abs(downscale_half(even).sum() - even.sum()));
  }
  return {worst_count < 1e-6 && worst_half < 1e-9,
          "max |sum - C| " + fmt_double(worst_count) + ", max downscale drift " + fmt_double(worst_half)};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(3);
  double worst_density = 0.0, worst_attention = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto a = random_annotation(rng, 32, 8);
    std::vector<std::pair<double, double>> heads;
    for (const auto& p : a.points) heads.emplace_back(p.x, p.y);
    const auto d = render_density(a);
    const auto att = render_attention(d);
    const auto od = oracle::density(a.height, a.width, heads, kDensityKernel.mu, kDensityKernel.rho);
    oracle::Grid dg(a.height, a.width);
    dg.v.assign(d.values.data(), d.values.data() + d.values.size());
    const auto oa = oracle::attention(dg, kAttentionKernel.mu, kAttentionKernel.rho, kAttentionThreshold);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < a.width; ++x) {
        worst_density = std::max(worst_density, std::abs(d.values(y, x) - od.at(y, x)));
        worst_attention = std::max(worst_attention, std::abs(att.values(y, x) - oa.at(y, x)));
      }
  }
  const auto k1 = adaptive_kernel(1024), k2 = adaptive_kernel(2048);
  const bool kernels = k1.mu == 15 && k1.rho == 4.75 && k2.mu == 31 && k2.rho == 8.75;
  return {worst_density < 1e-10 && worst_attention < 1e-10 && kernels,
          "max density diff " + fmt_double(worst_density) + ", max attention diff " + fmt_double(worst_attention) +
              ", kernels (" + std::to_string(k1.mu) + ", " + fmt_double(k1.rho) + ") (" + std::to_string(k2.mu) +
              ", " + fmt_double(k2.rho) + ")"};
}

std::map<std::string, std::vector<double>> model_grads(Model<double>& model, const Tensor<double>& x,
                                                       const Tensor<double>& den, const Tensor<double>& att,
                                                       double w_den, double w_att) {
  model.zero_grad();
  const auto out = model.forward(x, Mode::Train);
  const auto l = combined_loss<double>(scale(density_loss(out.density, den), w_den),
                                       attention_loss(out.attention_logits, att), w_att);
  backward(l);
  std::map<std::string, std::vector<double>> g;
  for (const auto& p : model.parameters()) {
    if (p.tensor.has_grad()) {
      g[p.name].assign(p.tensor.grad().data(), p.tensor.grad().data() + p.tensor.numel());
    } else {
      g[p.name].assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
  }
  return g;
}

Outcome loss_identities() {
  std::mt19937_64 rng(4);
  Model<double> model(mini());
  const auto x = testutil::randn({2, 3, 32, 32}, rng);
  auto den = testutil::randn({2, 1, 16, 16}, rng, 0.01);
  auto att = Tensor<double>::zeros({2, 1, 16, 16});
  std::bernoulli_distribution coin(0.3);
  for (Index i = 0; i < att.numel(); ++i) att.data()[i] = coin(rng) ? 1.0 : 0.0;

  const auto full = model_grads(model, x, den, att, 1.0, 0.1);
  const auto g_den = model_grads(model, x, den, att, 1.0, 0.0);
  const auto g_att = model_grads(model, x, den, att, 0.0, 1.0);
  double num = 0.0, denom = 0.0, dmp_max = 0.0;
  for (const auto& [name, g] : full) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double combo = g_den.at(name)[i] + 0.1 * g_att.at(name)[i];
      num = std::max(num, std::abs(g[i] - combo));
      denom = std::max(denom, std::abs(g[i]));
    }
    if (name.rfind("dmp.", 0) == 0) {
      for (double v : g_att.at(name)) dmp_max = std::max(dmp_max, std::abs(v));
    }
  }
  const double linearity = num / denom;
  Tape<double>::active().clear();

  const auto zero_logits = Tensor<double>::zeros({2, 1, 16, 16});
  const double bce = attention_loss(zero_logits, att).item();
  const double bce_err = std::abs(bce - 16.0 * 16.0 * std::log(2.0));
  return {linearity < 1e-8 && dmp_max == 0.0 && bce_err < 1e-9,
          "linearity rel err " + fmt_double(linearity) + ", max |dL_att/d dmp| " + fmt_double(dmp_max) +
              ", BCE(0.5) error " + fmt_double(bce_err)};
}

Outcome shape_contract() {
  NoGradGuard no_grad;
  Model<float> model(mini());
  Model<float> ablation(mini(false));
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 1.0f);
  bool ok = true;
  std::string bad;
  float lo = 1.0f, hi = 0.0f;
  for (Index h : {64, 128, 400})
    for (Index w : {64, 128, 400}) {
      auto x = Tensor<float>::zeros({1, 3, h, w});
      for (Index i = 0; i < x.numel(); ++i) x.data()[i] = g(rng);
      const auto out = model.forward(x, Mode::Train);
      const Shape want{1, 1, h / 2, w / 2};
      if (out.density.shape() != want || out.attention.shape() != want) {
        ok = false;
        bad += " " + std::to_string(h) + "x" + std::to_string(w);
      }
      lo = std::min(lo, out.attention.data().minCoeff());
      hi = std::max(hi, out.attention.data().maxCoeff());
      const auto ab = ablation.forward(x, Mode::Train);
      const auto& f = ab.density_features.data();
      const auto& r = ab.refined_features.data();
      if (f.size() != r.size() || std::memcmp(f.data(), r.data(), sizeof(float) * f.size()) != 0) {
        ok = false;
        bad += " ablation@" + std::to_string(h) + "x" + std::to_string(w);
      }
    }
  ok = ok && lo > 0.0f && hi < 1.0f;
  return {ok, "9 sizes, attention range [" + fmt_double(lo) + ", " + fmt_double(hi) + "]" +
                  (bad.empty() ? "" : "; mismatches:" + bad)};
}

// The overfit and reproducibility runs share one setup.
TrainerOptions overfit_options() {
  TrainerOptions o;
  o.train.batch_size = 4;
  o.train.lr = 1e-4;
  o.train.alpha = 0.1;
  o.train.epochs = 1000;
  o.train.max_steps = 2000;
  o.train.eval_every = 0;
  o.augment.crop_width = o.augment.crop_height = 128;
  o.augment.short_side_min = 128;
  o.augment.scale_min = o.augment.scale_max = 1.0;
  o.augment.gamma_p = 0.0;
  return o;
}

Outcome synthetic_overfit(const Dataset& ds) {
  Model<float> model(mini());
  AdamState<float> state;
  const auto t0 = Clock::now();
  const auto report = train(model, ds, nullptr, state, overfit_options());
  const double secs = seconds_since(t0);
  const auto r = evaluate(model, ds);
  const double acc = attention_accuracy(model, ds);
  return {r.mae < 1.0 && acc > 0.9 && secs < 900.0 && report.steps <= 2000,
          "train MAE " + fmt_double(r.mae) + " (MSE " + fmt_double(r.mse) + ") after " + std::to_string(report.steps) +
              " steps in " + fmt_double(secs) + " s, attention accuracy " + fmt_double(acc)};
}

Outcome metric_oracle() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1000.0);
  std::uniform_int_distribution<long> c(0, 1000), len(1, 64);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(len(rng));
    std::vector<double> pred(n), pred_d(n), gt_d(n);
    std::vector<long> gt(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = pred_d[i] = u(rng);
      gt[i] = c(rng);
      gt_d[i] = static_cast<double>(gt[i]);
    }
    double mae = 0.0, mse = 0.0;
    oracle::mae_mse(pred_d, gt_d, mae, mse);
    const auto r = aggregate_counts(pred, gt);
    worst = std::max({worst, std::abs(r.mae - mae), std::abs(r.mse - mse)});
  }
  const std::vector<double> p{10.0, 20.0};
  const std::vector<long> g{12, 16};
  const auto fx = aggregate_counts(p, g);
  const bool fixture = fx.mae == 3.0 && std::abs(fx.mse - std::sqrt(10.0)) < 1e-15;
  return {worst < 1e-12 && fixture, "max diff " + fmt_double(worst) + ", fixture MAE " + fmt_double(fx.mae) +
                                        " MSE " + fmt_double(fx.mse)};
}

struct ReproRun {
  double loss_at_100 = 0.0;
  std::vector<float> params;
};

ReproRun repro_run(const Dataset& ds, const std::filesystem::path* out, const std::filesystem::path* resume) {
  Model<float> model(mini());
  AdamState<float> state;
  if (resume) load_checkpoint(*resume, model, true, &state);
  auto o = overfit_options();
  o.train.max_steps = 100;
  o.train.checkpoint_every = 50;
  if (out) o.out_dir = *out;
  ReproRun r;
  o.on_step = [&](std::int64_t step, const StepLosses& l) {
    if (step == 100) r.loss_at_100 = l.total;
  };
  train(model, ds, nullptr, state, o);
  for (const auto& p : model.parameters()) {
    r.params.insert(r.params.end(), p.tensor.data().data(), p.tensor.data().data() + p.tensor.numel());
  }
  return r;
}

bool bitwise_equal(const ReproRun& a, const ReproRun& b) {
  return std::memcmp(&a.loss_at_100, &b.loss_at_100, sizeof(double)) == 0 && a.params.size() == b.params.size() &&
         std::memcmp(a.params.data(), b.params.data(), sizeof(float) * a.params.size()) == 0;
}

Outcome reproducibility(const Dataset& ds, const std::filesystem::path& dir) {
  const auto ckpt_dir = dir / "repro";
  const auto a = repro_run(ds, &ckpt_dir, nullptr);
  const auto b = repro_run(ds, nullptr, nullptr);
  const auto step50 = ckpt_dir / "step_50.sfac";
  const auto c = repro_run(ds, nullptr, &step50);
  const bool same = bitwise_equal(a, b), resumed = bitwise_equal(a, c);
  return {same && resumed, "loss@100 " + fmt_double(a.loss_at_100) + "; rerun " +
                               (same ? "bitwise identical" : "differs") + "; resume from step 50 " +
                               (resumed ? "bitwise identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto wanted = [&](int k) { return only.empty() || only.count(k) > 0; };

  testutil::TempDir dir("acceptance");
  std::optional<Dataset> synth;
  const auto synth_set = [&]() -> const Dataset& {
    if (!synth) {
      SynthConfig sc;  // 20 images, 128x128, 5-25 heads
      synth = Dataset::from_manifest(write_synth_dataset(dir / "synth", sc));
    }
    return *synth;
  };

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"count conservation", count_conservation},
      {"ground-truth oracle equivalence", oracle_equivalence},
      {"loss identities", loss_identities},
      {"shape contract", shape_contract},
      {"synthetic overfit", [&] { return synthetic_overfit(synth_set()); }},
      {"metric oracle", metric_oracle},
      {"reproducibility", [&] { return reproducibility(synth_set(), dir.path()); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i + 1);
    if (!wanted(k)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.passed;
    std::printf("%s %d %s: %s\n", o.passed ? "PASS" : "FAIL", k, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
