#include "sfanet/trainer.hpp"

#include "sfanet/checkpoint.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <stdexcept>

namespace sfanet {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
}

void write_report_rows(const std::filesystem::path& path, const std::vector<ReportRow>& rows, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(10);
  if (header) out << "epoch,step,L,L_den,L_att,val_MAE,val_MSE\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << r.step << ',' << r.loss << ',' << r.loss_density << ',' << r.loss_attention << ',';
    if (r.val_mae) out << *r.val_mae;
    out << ',';
    if (r.val_mse) out << *r.val_mse;
    out << '\n';
  }
}

}  // namespace

std::mt19937_64 sample_rng(std::uint64_t seed, std::int64_t epoch, std::size_t index) {
  auto seq = make_seed_seq(seed, static_cast<std::uint64_t>(epoch), index);
  return std::mt19937_64(seq);
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto seq = make_seed_seq(seed, static_cast<std::uint64_t>(epoch), kShuffleStream);
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

template <typename Scalar>
TrainReport train(Model<Scalar>& model, const Dataset& train_set, const Dataset* val, AdamState<Scalar>& state,
                  const TrainerOptions& options) {
  const auto& cfg = options.train;
  cfg.validate();
  options.augment.validate();
  if (train_set.empty()) throw std::invalid_argument("train: dataset is empty");
  if (options.augment.crop_width % 16 != 0 || options.augment.crop_height % 16 != 0) {
    throw std::invalid_argument("train: crop size must be a multiple of 16");
  }
  if (cfg.amp_enabled != model.config().amp_enabled) {
    throw std::invalid_argument("train: amp_enabled differs between the training and model configs");
  }

  const auto n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const auto per_epoch = static_cast<std::int64_t>((n + batch - 1) / batch);
  std::int64_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  const std::uint64_t seed = cfg.seed ^ (options.augment.seed * 0x9E3779B97F4A7C15ULL);

  TrainReport report;
  const auto save = [&](const std::string& file) {
    if (options.out_dir) save_checkpoint(model, &state, *options.out_dir / file);
  };
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);
  const bool resuming = state.batches > 0;

  double sum_l = 0.0, sum_den = 0.0, sum_att = 0.0;
  std::int64_t in_epoch = 0;
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  while (state.batches < total) {
    const std::int64_t epoch = state.batches / per_epoch;
    const std::int64_t pos = state.batches % per_epoch;
    if (order_epoch != epoch) {
      order = epoch_order(seed, epoch, n);
      order_epoch = epoch;
    }
    std::vector<Sample> samples;
    for (std::size_t k = static_cast<std::size_t>(pos) * batch; k < std::min(n, static_cast<std::size_t>(pos + 1) * batch);
         ++k) {
      const std::size_t idx = order[k];
      const auto& item = train_set[idx];
      auto rng = sample_rng(seed, epoch, idx);
      samples.push_back(augment(item.image, item.annotation.points, options.augment, rng, options.groundtruth,
                                options.normalize));
    }
    const auto b = make_batch<Scalar>(samples);
    const StepLosses l = train_step(model, b, state, cfg);
    ++state.batches;
    if (!l.applied) ++report.rejected;
    sum_l += l.total;
    sum_den += l.density;
    sum_att += l.attention;
    ++in_epoch;
    if (options.on_step) options.on_step(state.batches, l);
    if (cfg.checkpoint_every > 0 && state.batches % cfg.checkpoint_every == 0) {
      save("step_" + std::to_string(state.batches) + ".sfac");
    }

    const bool epoch_end = state.batches % per_epoch == 0 || state.batches == total;
    if (!epoch_end) continue;
    ReportRow row;
    row.epoch = static_cast<int>(epoch);
    row.step = state.batches;
    row.loss = sum_l / static_cast<double>(in_epoch);
    row.loss_density = sum_den / static_cast<double>(in_epoch);
    row.loss_attention = sum_att / static_cast<double>(in_epoch);
    const bool run_val = val && !val->empty() && cfg.eval_every > 0 &&
                         ((epoch + 1) % cfg.eval_every == 0 || state.batches == total);
    if (run_val) {
      const auto r = evaluate(model, *val, EvalOptions{options.normalize, std::nullopt});
      row.val_mae = r.mae;
      row.val_mse = r.mse;
      if (!report.best_mae || r.mae < *report.best_mae) {
        report.best_mae = r.mae;
        report.best_step = state.batches;
        save("best.sfac");
      }
    }
    spdlog::info("epoch {} step {}: L {:.6g} L_den {:.6g} L_att {:.6g}{}", row.epoch, row.step, row.loss,
                 row.loss_density, row.loss_attention,
                 row.val_mae ? fmt::format(" val MAE {:.4f} MSE {:.4f}", *row.val_mae, *row.val_mse) : "");
    report.rows.push_back(row);
    sum_l = sum_den = sum_att = 0.0;
    in_epoch = 0;
  }
  report.steps = state.batches;
  save("final.sfac");
  if (options.out_dir) write_report_rows(*options.out_dir / "report.csv", report.rows, resuming);
  if (report.rejected > 0) spdlog::warn("{} of the batches in this run were rejected", report.rejected);
  return report;
}

template TrainReport train(Model<float>&, const Dataset&, const Dataset*, AdamState<float>&, const TrainerOptions&);
template TrainReport train(Model<double>&, const Dataset&, const Dataset*, AdamState<double>&, const TrainerOptions&);

}  // namespace sfanet
