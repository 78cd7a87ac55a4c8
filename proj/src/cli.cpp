#include "sfanet/cli.hpp"

#include "sfanet/checkpoint.hpp"
#include "sfanet/config.hpp"
#include "sfanet/evaluation.hpp"
#include "sfanet/gradcheck.hpp"
#include "sfanet/synth.hpp"
#include "sfanet/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iomanip>

namespace sfanet {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.preset.empty() ? RunConfig{} : preset(c.preset);
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw ConfigError("config file not found: " + c.config);
    cfg = load_config(c.config, cfg);
  }
  if (c.seed) cfg.set_seed(*c.seed);
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

fs::path require_out(const RunConfig& cfg) {
  if (!cfg.out_dir) throw std::invalid_argument("an output directory is required (--out or data.out_dir)");
  fs::create_directories(*cfg.out_dir);
  return *cfg.out_dir;
}

fs::path manifest_or(const std::string& flag, const std::optional<fs::path>& fallback) {
  if (!flag.empty()) return flag;
  if (fallback) return *fallback;
  throw std::invalid_argument("a manifest is required (--manifest or data.train_manifest)");
}

int cmd_synth(const Common& common, int images, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  SynthConfig sc;
  sc.images = images;
  sc.seed = common.seed.value_or(0);
  const auto manifest = write_synth_dataset(require_out(cfg), sc);
  out << "wrote " << sc.images << " images; manifest " << manifest.string() << '\n';
  return 0;
}

int cmd_gen_gt(const Common& common, const std::string& manifest_flag, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const fs::path dir = require_out(cfg);
  const auto items = load_manifest(manifest_or(manifest_flag, cfg.train_manifest));
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& item : items) {
    DensityMap density;
    PointAnnotation ann;
    if (cfg.ingest.qnrf_resize) {
      const auto q = qnrf_preprocess(item.annotation, to_rgb(read_image(item.image_path)));
      density = q.density;
      ann = q.annotation;
    } else {
      const auto loaded = ingest(item, cfg.ingest);
      ann = loaded.annotation;
      density = render_density(ann, cfg.groundtruth.density_kernel);
    }
    const auto attention = render_attention(density, cfg.groundtruth.attention_kernel, cfg.groundtruth.threshold);
    const std::string id = ann.image_id;
    write_density_sidecar(dir / (id + "_density.sfdm"), density.values);
    Image mask(static_cast<int>(attention.values.cols()), static_cast<int>(attention.values.rows()), 1);
    mask.pixels = Eigen::Map<const Eigen::ArrayXd>(attention.values.data(), attention.values.size()).cast<float>();
    write_image(dir / (id + "_attention.png"), mask);
    nlohmann::ordered_json e;
    e["image_id"] = id;
    e["width"] = ann.width;
    e["height"] = ann.height;
    e["count"] = ann.count();
    e["density_sum"] = density.sum();
    summary.push_back(e);
  }
  std::ofstream(dir / "groundtruth.json") << summary.dump(2) << '\n';
  out << "rendered ground truth for " << items.size() << " images into " << dir.string() << '\n';
  return 0;
}

Model<float> build_from_checkpoint(const RunConfig& cfg, const std::string& checkpoint) {
  Model<float> model(cfg.model);
  if (!checkpoint.empty()) load_checkpoint(checkpoint, model, true);
  return model;
}

std::optional<Map2D> load_roi(const std::string& flag, const std::optional<fs::path>& fallback) {
  if (!flag.empty()) return read_mask(flag);
  if (fallback) return read_mask(*fallback);
  return std::nullopt;
}

void print_summary(const EvalResult& r, std::ostream& out) {
  out << std::setprecision(6) << "n " << r.n << "  MAE " << r.mae << "  MSE " << r.mse << '\n';
}

int cmd_train(const Common& common, const std::string& manifest_flag, const std::string& val_flag,
              const std::string& resume, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const fs::path dir = require_out(cfg);
  const Dataset train_set = Dataset::from_manifest(manifest_or(manifest_flag, cfg.train_manifest), cfg.ingest);
  std::optional<Dataset> val;
  if (!val_flag.empty()) val = Dataset::from_manifest(val_flag, cfg.ingest);
  else if (cfg.val_manifest) val = Dataset::from_manifest(*cfg.val_manifest, cfg.ingest);

  Model<float> model(cfg.model);
  AdamState<float> state;
  if (!resume.empty()) load_checkpoint(resume, model, true, &state);
  TrainerOptions opts;
  opts.train = cfg.train;
  opts.augment = cfg.augment;
  opts.groundtruth = cfg.groundtruth;
  opts.normalize = cfg.normalize;
  opts.out_dir = dir;
  const auto report = train(model, train_set, val ? &*val : nullptr, state, opts);
  out << "trained " << report.steps << " steps";
  if (report.best_mae) out << "; best validation MAE " << *report.best_mae << " at step " << report.best_step;
  out << "; outputs in " << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Common& common, const std::string& manifest_flag, const std::string& checkpoint,
             const std::string& density_dir, const std::string& roi_flag, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const fs::path dir = require_out(cfg);
  const auto manifest = manifest_or(manifest_flag, cfg.val_manifest ? cfg.val_manifest : cfg.train_manifest);
  const auto roi = load_roi(roi_flag, cfg.roi);
  EvalResult result;
  if (!density_dir.empty()) {
    // Precomputed density maps, e.g. the output of gen-gt.
    std::vector<ImageResult> rows;
    for (const auto& item : load_manifest(manifest)) {
      const Map2D d = read_density_sidecar(fs::path(density_dir) / (item.annotation.image_id + "_density.sfdm"));
      std::optional<Map2D> mask = roi;
      if (!mask && item.roi_path) mask = read_mask(*item.roi_path);
      const double count = mask ? (d * roi_to_output_grid(*mask, d.rows(), d.cols())).sum() : d.sum();
      rows.push_back({item.annotation.image_id, count, static_cast<long>(item.annotation.count()), 0.0, 0.0});
    }
    result = aggregate(std::move(rows));
  } else {
    if (checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint or --density-dir");
    auto model = build_from_checkpoint(cfg, checkpoint);
    const Dataset ds = Dataset::from_manifest(manifest, cfg.ingest);
    result = evaluate(model, ds, EvalOptions{cfg.normalize, roi});
  }
  write_eval_json(dir / "eval.json", result);
  write_eval_csv(dir / "eval.csv", result);
  print_summary(result, out);
  return 0;
}

int cmd_infer(const Common& common, const std::string& checkpoint, const std::string& image_path,
              const std::string& roi_flag, const std::string& format, std::ostream& out) {
  const RunConfig cfg = resolve_config(common);
  const fs::path dir = require_out(cfg);
  if (checkpoint.empty()) throw std::invalid_argument("infer needs --checkpoint");
  auto model = build_from_checkpoint(cfg, checkpoint);
  const Image image = to_rgb(read_image(image_path));
  const auto roi = load_roi(roi_flag, cfg.roi);
  NoGradGuard no_grad;
  const auto in = eval_prepare<float>(image, roi, cfg.normalize);
  const auto output = model.forward(in.image, Mode::Eval);
  const double count = count_from_density(output.density, in.roi ? &*in.roi : nullptr, in.valid_rows, in.valid_cols);
  const auto paths = export_maps(output, image, dir / fs::path(image_path).stem(), "." + format, in.valid_rows,
                                 in.valid_cols);
  out << std::setprecision(6) << "count " << count << '\n'
      << "density " << paths.density_image.string() << '\n'
      << "attention " << paths.attention_image.string() << '\n'
      << "panel " << paths.panel_image.string() << '\n';
  return 0;
}

int cmd_grad_check(const Common& common, int coordinates, std::ostream& out) {
  GradCheckOptions opts;
  opts.seed = common.seed.value_or(0);
  opts.coordinates = coordinates;
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(opts)) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(34) << r.name << " checked " << std::setw(4)
        << r.checked << " skipped " << std::setw(4) << r.skipped << " max rel err " << std::scientific << std::setprecision(3) << r.max_rel_error
        << std::defaultfloat << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SFANet crowd counting: ground truth, training, evaluation and inference", "sfanet"};
  app.require_subcommand(1);
  Common common;
  std::uint64_t seed_value = 0;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "INI config file");
    sub->add_option("--preset", common.preset, "Base settings")->check(CLI::IsMember(preset_names()));
    sub->add_option("--seed", seed_value, "Seed for initialization, augmentation and shuffling");
    sub->add_option("--out", common.out, "Output directory");
  };

  std::string manifest, val_manifest, checkpoint, density_dir, roi, image, resume, format = "png";
  int images = 20, coordinates = 50;

  auto* gen_gt = app.add_subcommand("gen-gt", "Render density and attention ground truth for a manifest");
  add_common(gen_gt);
  gen_gt->add_option("--manifest", manifest, "Dataset manifest");

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoints and report.csv");
  add_common(train_cmd);
  train_cmd->add_option("--manifest", manifest, "Training manifest");
  train_cmd->add_option("--val-manifest", val_manifest, "Validation manifest");
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");

  auto* eval_cmd = app.add_subcommand("eval", "MAE/MSE over a manifest; writes eval.json and eval.csv");
  add_common(eval_cmd);
  eval_cmd->add_option("--manifest", manifest, "Dataset manifest");
  eval_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval_cmd->add_option("--density-dir", density_dir, "Use <id>_density.sfdm maps from this directory as predictions");
  eval_cmd->add_option("--roi", roi, "ROI mask applied to every image");

  auto* infer_cmd = app.add_subcommand("infer", "Count one image and export its maps");
  add_common(infer_cmd);
  infer_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint");
  infer_cmd->add_option("--image", image, "Input image")->required();
  infer_cmd->add_option("--roi", roi, "ROI mask");
  infer_cmd->add_option("--format", format, "Export format")->check(CLI::IsMember({"png", "pgm"}));

  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient suite; nonzero exit on failure");
  add_common(grad_cmd);
  grad_cmd->add_option("--coordinates", coordinates, "Sampled coordinates per check");

  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic blob dataset");
  add_common(synth_cmd);
  synth_cmd->add_option("--images", images, "Number of images");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) common.seed = seed_value;
  }

  try {
    if (gen_gt->parsed()) return cmd_gen_gt(common, manifest, out);
    if (train_cmd->parsed()) return cmd_train(common, manifest, val_manifest, resume, out);
    if (eval_cmd->parsed()) return cmd_eval(common, manifest, checkpoint, density_dir, roi, out);
    if (infer_cmd->parsed()) return cmd_infer(common, checkpoint, image, roi, format, out);
    if (grad_cmd->parsed()) return cmd_grad_check(common, coordinates, out);
    if (synth_cmd->parsed()) return cmd_synth(common, images, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace sfanet
