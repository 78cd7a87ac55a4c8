#include "sfanet/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace sfanet {

namespace {

static_assert(std::endian::native == std::endian::little, "sidecar I/O assumes a little-endian host");

constexpr char kSidecarMagic[4] = {'S', 'F', 'D', 'M'};

Image map_to_image(const Map2D& map, double scale) {
  Image img(static_cast<int>(map.cols()), static_cast<int>(map.rows()), 1);
  for (Index y = 0; y < map.rows(); ++y)
    for (Index x = 0; x < map.cols(); ++x) img.at(0, int(y), int(x)) = static_cast<float>(map(y, x) * scale);
  return img;
}

// Nearest-neighbour upscale by 2, cropped to width x height.
Image upscale_to(const Image& half, int width, int height) {
  Image out(width, height, half.channels);
  for (int c = 0; c < half.channels; ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out.at(c, y, x) = half.at(c, std::min(y / 2, half.height - 1), std::min(x / 2, half.width - 1));
  return out;
}

}  // namespace

template <typename Scalar>
Map2D tensor_to_map(const Tensor<Scalar>& t, Index rows, Index cols) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) {
    throw std::invalid_argument("expected a [1,1,h,w] map, got " + shape_string(t.shape()));
  }
  const Index h = t.dim(2), w = t.dim(3);
  if (rows < 0) rows = h;
  if (cols < 0) cols = w;
  if (rows > h || cols > w) throw std::invalid_argument("crop region larger than the map");
  Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> full(t.data().data(), h, w);
  return full.topLeftCorner(rows, cols).template cast<double>();
}

template <typename Scalar>
double count_from_density(const Tensor<Scalar>& density, const Map2D* roi, Index valid_rows, Index valid_cols) {
  const Map2D map = tensor_to_map(density, valid_rows, valid_cols);
  if (!roi) return map.sum();
  if (roi->rows() != map.rows() || roi->cols() != map.cols()) {
    throw std::invalid_argument("ROI grid " + std::to_string(roi->rows()) + "x" + std::to_string(roi->cols()) +
                                " does not match the counted region " + std::to_string(map.rows()) + "x" +
                                std::to_string(map.cols()));
  }
  return (map * *roi).sum();
}

EvalResult aggregate(std::vector<ImageResult> results) {
  if (results.empty()) throw std::invalid_argument("cannot aggregate an empty evaluation");
  std::sort(results.begin(), results.end(),
            [](const ImageResult& a, const ImageResult& b) { return a.image_id < b.image_id; });
  EvalResult r;
  r.n = results.size();
  double abs_sum = 0.0, sq_sum = 0.0;
  for (auto& img : results) {
    const double e = img.predicted_count - static_cast<double>(img.gt_count);
    img.abs_err = std::abs(e);
    img.sq_err = e * e;
    abs_sum += img.abs_err;
    sq_sum += img.sq_err;
  }
  r.mae = abs_sum / static_cast<double>(r.n);
  r.mse = std::sqrt(sq_sum / static_cast<double>(r.n));
  r.per_image = std::move(results);
  return r;
}

EvalResult aggregate_counts(std::span<const double> predicted, std::span<const long> ground_truth) {
  if (predicted.size() != ground_truth.size()) throw std::invalid_argument("count vectors differ in length");
  std::vector<ImageResult> results;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    std::ostringstream id;
    id << std::setw(8) << std::setfill('0') << i;
    results.push_back({id.str(), predicted[i], ground_truth[i], 0.0, 0.0});
  }
  return aggregate(std::move(results));
}

template <typename Scalar>
EvalResult evaluate(Model<Scalar>& model, const Dataset& dataset, const EvalOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  NoGradGuard no_grad;
  std::vector<ImageResult> results;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& item = dataset[i];
    const auto& roi = options.roi ? options.roi : item.roi;
    const auto in = eval_prepare<Scalar>(item.image, roi, options.normalize);
    const auto out = model.forward(in.image, Mode::Eval);
    const double count =
        count_from_density(out.density, in.roi ? &*in.roi : nullptr, in.valid_rows, in.valid_cols);
    results.push_back({item.annotation.image_id, count, static_cast<long>(item.annotation.count()), 0.0, 0.0});
  }
  return aggregate(std::move(results));
}

template <typename Scalar>
double attention_accuracy(Model<Scalar>& model, const Dataset& dataset, const GroundTruthConfig& gt,
                          const NormalizeConfig& norm) {
  if (dataset.empty()) throw std::invalid_argument("attention_accuracy: empty dataset");
  if (!model.config().amp_enabled) throw std::invalid_argument("attention_accuracy: model has no attention path");
  NoGradGuard no_grad;
  double agree = 0.0, total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& item = dataset[i];
    const auto in = eval_prepare<Scalar>(item.image, std::nullopt, norm);
    const auto out = model.forward(in.image, Mode::Eval);
    const Map2D att = tensor_to_map(out.attention, in.valid_rows, in.valid_cols);
    PointAnnotation ann = item.annotation;
    ann.width += ann.width % 2;
    ann.height += ann.height % 2;
    const auto target =
        downscale_half(render_attention(render_density(ann, gt.density_kernel), gt.attention_kernel, gt.threshold));
    const Map2D predicted = (att > 0.5).cast<double>();
    agree += (predicted == target.values).cast<double>().sum();
    total += static_cast<double>(att.size());
  }
  return agree / total;
}

std::string eval_result_json(const EvalResult& result) {
  nlohmann::ordered_json j;
  j["n"] = result.n;
  j["mae"] = result.mae;
  j["mse"] = result.mse;
  j["per_image"] = nlohmann::ordered_json::array();
  for (const auto& r : result.per_image) {
    nlohmann::ordered_json e;
    e["image_id"] = r.image_id;
    e["predicted_count"] = r.predicted_count;
    e["gt_count"] = r.gt_count;
    e["abs_err"] = r.abs_err;
    e["sq_err"] = r.sq_err;
    j["per_image"].push_back(e);
  }
  return j.dump(2) + "\n";
}

void write_eval_json(const std::filesystem::path& path, const EvalResult& result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << eval_result_json(result);
}

void write_eval_csv(const std::filesystem::path& path, const EvalResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17) << "image_id,predicted_count,gt_count,abs_err,sq_err\n";
  for (const auto& r : result.per_image) {
    out << r.image_id << ',' << r.predicted_count << ',' << r.gt_count << ',' << r.abs_err << ',' << r.sq_err << '\n';
  }
}

void write_density_sidecar(const std::filesystem::path& path, const Map2D& density) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write density sidecar " + path.string());
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(density.cols()),
                                   static_cast<std::uint32_t>(density.rows()), 0u};
  out.write(kSidecarMagic, 4);
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  const Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values = density.cast<float>();
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw std::runtime_error("failed writing density sidecar " + path.string());
}

Map2D read_density_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open density sidecar " + path.string());
  char magic[4];
  std::uint32_t header[3];
  if (!in.read(magic, 4) || std::memcmp(magic, kSidecarMagic, 4) != 0) {
    throw std::runtime_error(path.string() + " is not a density sidecar");
  }
  if (!in.read(reinterpret_cast<char*>(header), sizeof(header))) throw std::runtime_error(path.string() + " is truncated");
  Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values(header[1], header[0]);
  if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)))) {
    throw std::runtime_error(path.string() + " is truncated");
  }
  return values.cast<double>();
}

template <typename Scalar>
ExportedMaps export_maps(const ModelOutput<Scalar>& output, const Image& input, const std::filesystem::path& prefix,
                         const std::string& extension, Index valid_rows, Index valid_cols) {
  if (extension != ".png" && extension != ".pgm") throw std::invalid_argument("export format must be .png or .pgm");
  const Map2D density = tensor_to_map(output.density, valid_rows, valid_cols);
  const Map2D attention = tensor_to_map(output.attention, valid_rows, valid_cols);
  const double peak = density.maxCoeff();
  const Image density_img = map_to_image(density, peak > 0.0 ? 1.0 / peak : 0.0);
  const Image attention_img = map_to_image(attention, 1.0);

  ExportedMaps paths;
  const auto base = prefix.string();
  paths.density_image = base + "_density" + extension;
  paths.density_raw = base + "_density.sfdm";
  paths.attention_image = base + "_attention" + extension;
  paths.panel_image = base + "_panel" + (extension == ".png" ? std::string(".png") : std::string(".ppm"));
  write_image(paths.density_image, density_img);
  write_density_sidecar(paths.density_raw, density);
  write_image(paths.attention_image, attention_img);

  const Image left = to_rgb(input);
  const Image mid = to_rgb(upscale_to(density_img, left.width, left.height));
  const Image right = to_rgb(upscale_to(attention_img, left.width, left.height));
  Image panel(3 * left.width, left.height, 3);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < left.height; ++y)
      for (int x = 0; x < left.width; ++x) {
        panel.at(c, y, x) = left.at(c, y, x);
        panel.at(c, y, x + left.width) = mid.at(c, y, x);
        panel.at(c, y, x + 2 * left.width) = right.at(c, y, x);
      }
  write_image(paths.panel_image, panel);
  return paths;
}

#define SFANET_INSTANTIATE_EVAL(S)                                                                            \
  template Map2D tensor_to_map(const Tensor<S>&, Index, Index);                                               \
  template double count_from_density(const Tensor<S>&, const Map2D*, Index, Index);                           \
  template EvalResult evaluate(Model<S>&, const Dataset&, const EvalOptions&);                                \
  template double attention_accuracy(Model<S>&, const Dataset&, const GroundTruthConfig&,                     \
                                     const NormalizeConfig&);                                                  \
  template ExportedMaps export_maps(const ModelOutput<S>&, const Image&, const std::filesystem::path&,        \
                                    const std::string&, Index, Index);

SFANET_INSTANTIATE_EVAL(float)
SFANET_INSTANTIATE_EVAL(double)

#undef SFANET_INSTANTIATE_EVAL

}  // namespace sfanet
