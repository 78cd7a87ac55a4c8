#include "sfanet/gradcheck.hpp"

#include "sfanet/model.hpp"
#include "sfanet/ops.hpp"
#include "sfanet/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace sfanet {

namespace {

using T = Tensor<double>;

T random_tensor(const Shape& shape, std::mt19937_64& rng, double stddev = 1.0, bool grad = true) {
  std::normal_distribution<double> dist(0.0, stddev);
  T t = T::zeros(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = dist(rng);
  t.set_requires_grad(grad);
  return t;
}

// Values bounded away from zero, so kinks sit far from every sample.
T away_from_zero(const Shape& shape, std::mt19937_64& rng, double margin = 0.1) {
  T t = random_tensor(shape, rng);
  for (Index i = 0; i < t.numel(); ++i) {
    auto& v = t.data()[i];
    v = std::copysign(std::abs(v) + margin, v);
  }
  return t;
}

// Distinct values spaced at least `gap` apart, in random order.
T distinct(const Shape& shape, std::mt19937_64& rng, double gap = 0.05) {
  T t = T::zeros(shape);
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = gap * static_cast<double>(i) - 0.5 * gap * values.size();
  std::shuffle(values.begin(), values.end(), rng);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = values[static_cast<std::size_t>(i)];
  t.set_requires_grad(true);
  return t;
}

T binary(const Shape& shape, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  T t = T::zeros(shape);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = coin(rng) ? 1.0 : 0.0;
  return t;
}

// Weighted sum with fixed random weights so no gradient is trivially uniform.
T project(const T& out, const T& weights) { return sum(mul(out, weights)); }

// Round-off allowance on a loss difference, in units of the loss's epsilon.
constexpr double kRoundoffUlps = 16.0;
constexpr int kMaxTriesPerInput = 1000;
// Steps tried per coordinate: step, step / 10, step / 100.
constexpr int kStepShrinks = 3;
constexpr int kMaxSkips = 5000;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult check_gradients(const std::string& name, const std::function<T()>& loss, const std::vector<T>& inputs,
                                const GradCheckOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckResult result;
  result.name = name;
  for (const auto& x : inputs) x.clear_grad();
  backward(loss());

  NoGradGuard no_grad;
  const double eps = std::numeric_limits<double>::epsilon();
  // Slopes over the four half-step intervals of [x - h, x + h] lie on a line
  // up to O(h^2) for a smooth loss; a slope jump anywhere in the stencil
  // leaves a second difference of at least a third of the jump.
  struct Estimate {
    double numeric = 0.0;
    double noise = 0.0;
    bool smooth = false;
  };
  const auto estimate = [&](double& v, double h) {
    const double saved = v, half = 0.5 * h;
    std::array<double, 5> l{};
    double scale = 0.0;
    for (int j = 0; j < 5; ++j) {
      v = saved + (j - 2) * half;
      l[j] = loss().item();
      scale = std::max(scale, std::abs(l[j]));
    }
    v = saved;
    std::array<double, 4> slope{};
    for (int j = 0; j < 4; ++j) slope[j] = (l[j + 1] - l[j]) / half;
    Estimate e;
    e.numeric = (l[4] - l[0]) / (2.0 * h);
    e.noise = kRoundoffUlps * eps * scale / (2.0 * h);
    const double bend = std::max(std::abs(slope[2] - 2.0 * slope[1] + slope[0]),
                                 std::abs(slope[3] - 2.0 * slope[2] + slope[1]));
    // Each slope carries up to four times the round-off of the full-width quotient.
    const double floor = std::max(options.denominator_floor, 16.0 * e.noise / options.kink_tolerance);
    e.smooth = bend < options.kink_tolerance * std::max(std::abs(e.numeric), floor);
    return e;
  };
  // Returns false when every step size tried straddles a kink.
  const auto check = [&](std::size_t i, Index k) {
    const auto& x = inputs[i];
    const double analytic = x.has_grad() ? x.grad()[k] : 0.0;
    double& v = x.handle()->data[k];
    for (int shrink = 0; shrink < kStepShrinks; ++shrink) {
      const Estimate e = estimate(v, options.step * std::pow(0.1, shrink));
      if (!e.smooth) continue;
      const double err = relative_error(analytic, e.numeric, std::max(options.denominator_floor, e.noise / options.tolerance));
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (!(err < options.tolerance)) result.passed = false;
      ++result.checked;
      return true;
    }
    return false;
  };

  result.passed = true;
  std::mt19937_64 rng(options.seed ^ std::hash<std::string>{}(name));
  std::vector<std::pair<std::size_t, Index>> pool;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (Index k = 0; k < inputs[i].numel(); ++k) pool.emplace_back(i, k);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<bool> covered(inputs.size(), false), visited(pool.size(), false);
  std::vector<int> tries(inputs.size(), 0);
  const auto visit = [&](std::size_t n) {
    visited[n] = true;
    const bool ok = check(pool[n].first, pool[n].second);
    if (!ok) ++result.skipped;
    return ok;
  };
  // First one valid coordinate per input, then fill up to the requested count.
  for (std::size_t n = 0; n < pool.size(); ++n) {
    const std::size_t i = pool[n].first;
    if (covered[i] || tries[i] >= kMaxTriesPerInput) continue;
    ++tries[i];
    if (visit(n)) covered[i] = true;
  }
  const int wanted = std::max<int>(options.coordinates, static_cast<int>(inputs.size()));
  for (std::size_t n = 0; n < pool.size() && result.checked < wanted && result.skipped < kMaxSkips; ++n) {
    if (!visited[n]) visit(n);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!covered[i]) result.passed = false;
  }
  if (result.checked < std::min<int>(wanted, static_cast<int>(pool.size()))) result.passed = false;
  for (const auto& x : inputs) x.clear_grad();
  result.seconds = seconds_since(t0);
  return result;
}

GradCheckResult check_model_gradients(const GradCheckOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(options.seed + 17);
  ModelConfig mc;
  mc.width_multiplier = 0.125;
  mc.init_seed = options.seed;
  Model<double> model(mc);
  const T image = random_tensor({1, 3, 32, 32}, rng, 1.0, false);
  T density = random_tensor({1, 1, 16, 16}, rng, 0.01, false);
  const T attention = binary({1, 1, 16, 16}, rng);
  TrainConfig tc;
  const auto loss = [&] {
    const auto out = model.forward(image, Mode::Train);
    const auto dl = density_loss(out.density, density, tc.reduction);
    const auto al = attention_loss(out.attention_logits, attention, tc.reduction);
    return combined_loss(dl, std::optional<T>(al), tc.alpha);
  };
  std::vector<T> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  auto r = check_gradients("model(width 1/8, 1x3x32x32)", loss, params, options);
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<GradCheckResult> results;
  const auto run = [&](const std::string& name, const std::function<T()>& loss, const std::vector<T>& inputs) {
    results.push_back(check_gradients(name, loss, inputs, options));
  };

  for (const auto algo : {ConvAlgorithm::Direct, ConvAlgorithm::Gemm}) {
    const std::string tag = algo == ConvAlgorithm::Direct ? "direct" : "gemm";
    for (int k : {1, 3}) {
      const T x = random_tensor({2, 3, 5, 6}, rng), w = random_tensor({4, 3, k, k}, rng), b = random_tensor({4}, rng);
      const T r = random_tensor({2, 4, 5, 6}, rng, 1.0, false);
      run("conv2d " + std::to_string(k) + "x" + std::to_string(k) + " " + tag,
          [=] { return project(conv2d(x, w, b, 1, k / 2, algo), r); }, {x, w, b});
    }
  }
  {
    const T x = random_tensor({3, 2, 4, 5}, rng), g = random_tensor({2}, rng), b = random_tensor({2}, rng);
    const T r = random_tensor({3, 2, 4, 5}, rng, 1.0, false);
    auto stats = std::make_shared<BatchNormState<double>>(2);
    run("batchnorm2d train", [=] { return project(batchnorm2d(x, g, b, *stats, Mode::Train, 1e-5, 0.1), r); },
        {x, g, b});
  }
  {
    const T x = away_from_zero({2, 3, 4, 4}, rng), r = random_tensor({2, 3, 4, 4}, rng, 1.0, false);
    run("relu", [=] { return project(relu(x), r); }, {x});
  }
  {
    const T x = random_tensor({2, 3, 4, 4}, rng, 3.0), r = random_tensor({2, 3, 4, 4}, rng, 1.0, false);
    run("sigmoid", [=] { return project(sigmoid(x), r); }, {x});
  }
  {
    const T x = distinct({2, 2, 6, 6}, rng), r = random_tensor({2, 2, 3, 3}, rng, 1.0, false);
    run("maxpool2x2", [=] { return project(maxpool2x2(x), r); }, {x});
  }
  {
    const T x = random_tensor({2, 2, 4, 4}, rng), r = random_tensor({2, 2, 8, 8}, rng, 1.0, false);
    run("upsample2x", [=] { return project(upsample2x(x), r); }, {x});
  }
  {
    const T a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
    const T r = random_tensor({2, 5, 3, 3}, rng, 1.0, false);
    run("concat_channels", [=] { return project(concat_channels(a, b), r); }, {a, b});
  }
  {
    const T x = random_tensor({2, 5, 3, 3}, rng), r = random_tensor({2, 2, 3, 3}, rng, 1.0, false);
    run("slice_channels", [=] { return project(slice_channels(x, 1, 3), r); }, {x});
  }
  {
    const T f = random_tensor({2, 4, 3, 5}, rng), m = random_tensor({2, 1, 3, 5}, rng);
    const T r = random_tensor({2, 4, 3, 5}, rng, 1.0, false);
    run("mul_broadcast_channel", [=] { return project(mul_broadcast_channel(f, m), r); }, {f, m});
  }
  {
    const T a = random_tensor({6, 10}, rng), b = random_tensor({6, 10}, rng), r = random_tensor({6, 10}, rng, 1.0, false);
    run("add", [=] { return project(add(a, b), r); }, {a, b});
    run("mul", [=] { return project(mul(a, b), r); }, {a, b});
    run("scale", [=] { return project(scale(a, 0.37), r); }, {a});
    run("sum", [=] { return scale(sum(mul(a, a)), 0.5); }, {a});
  }
  {
    const T p = random_tensor({2, 1, 6, 6}, rng), t = random_tensor({2, 1, 6, 6}, rng, 1.0, false);
    run("squared_error_sum", [=] { return squared_error_sum(p, t, 0.5); }, {p});
  }
  {
    const T z = random_tensor({2, 1, 6, 6}, rng, 3.0), t = binary({2, 1, 6, 6}, rng);
    run("bce_with_logits_sum", [=] { return bce_with_logits_sum(z, t, 0.5); }, {z});
  }
  results.push_back(check_model_gradients(options));
  return results;
}

}  // namespace sfanet
