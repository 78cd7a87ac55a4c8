#include "sfanet/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace sfanet {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": " + what + " (" + shape_string(a) + " vs " + shape_string(b) + ")");
}

void require_rank4(const std::string& op, const Shape& s) {
  if (s.size() != 4) throw std::invalid_argument(op + ": expected NCHW tensor, got " + shape_string(s));
}

// Rows are (ci, ky, kx), columns are output pixels (y, x).
template <typename Scalar>
void im2col3x3(const Scalar* image, Index channels, Index height, Index width, Scalar* col) {
  const Index pixels = height * width;
  for (Index ci = 0; ci < channels; ++ci) {
    const Scalar* plane = image + ci * pixels;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* row = col + ((ci * 3 + ky) * 3 + kx) * pixels;
        const Index dx = kx - 1;
        for (Index y = 0; y < height; ++y) {
          Scalar* dst = row + y * width;
          const Index iy = y + ky - 1;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + width, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * width;
          for (Index x = 0; x < width; ++x) {
            const Index ix = x + dx;
            dst[x] = (ix >= 0 && ix < width) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im3x3(const Scalar* col, Index channels, Index height, Index width, Scalar* image) {
  const Index pixels = height * width;
  for (Index ci = 0; ci < channels; ++ci) {
    Scalar* plane = image + ci * pixels;
    for (Index ky = 0; ky < 3; ++ky) {
      for (Index kx = 0; kx < 3; ++kx) {
        const Scalar* row = col + ((ci * 3 + ky) * 3 + kx) * pixels;
        const Index dx = kx - 1;
        for (Index y = 0; y < height; ++y) {
          const Index iy = y + ky - 1;
          if (iy < 0 || iy >= height) continue;
          const Scalar* src = row + y * width;
          Scalar* dst = plane + iy * width;
          for (Index x = 0; x < width; ++x) {
            const Index ix = x + dx;
            if (ix >= 0 && ix < width) dst[ix] += src[x];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void conv_forward_direct(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                         Tensor<Scalar>& out) {
  const Index n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0), k = weight.dim(2), pad = k / 2;
  const auto& x = input.data();
  const auto& wt = weight.data();
  auto& y = out.data();
  for (Index n = 0; n < n_batch; ++n)
    for (Index co = 0; co < cout; ++co)
      for (Index oy = 0; oy < h; ++oy)
        for (Index ox = 0; ox < w; ++ox) {
          Scalar acc = bias.data()[co];
          for (Index ci = 0; ci < cin; ++ci)
            for (Index ky = 0; ky < k; ++ky) {
              const Index iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (Index kx = 0; kx < k; ++kx) {
                const Index ix = ox + kx - pad;
                if (ix < 0 || ix >= w) continue;
                acc += x[input.offset(n, ci, iy, ix)] * wt[((co * cin + ci) * k + ky) * k + kx];
              }
            }
          y[out.offset(n, co, oy, ox)] = acc;
        }
}

template <typename Scalar>
void conv_backward_direct(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Buffer<Scalar>& gy,
                          Buffer<Scalar>* gx, Buffer<Scalar>* gw, Buffer<Scalar>* gb) {
  const Index n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0), k = weight.dim(2), pad = k / 2;
  const auto& x = input.data();
  const auto& wt = weight.data();
  for (Index n = 0; n < n_batch; ++n)
    for (Index co = 0; co < cout; ++co)
      for (Index oy = 0; oy < h; ++oy)
        for (Index ox = 0; ox < w; ++ox) {
          const Scalar g = gy[((n * cout + co) * h + oy) * w + ox];
          if (gb) (*gb)[co] += g;
          for (Index ci = 0; ci < cin; ++ci)
            for (Index ky = 0; ky < k; ++ky) {
              const Index iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              for (Index kx = 0; kx < k; ++kx) {
                const Index ix = ox + kx - pad;
                if (ix < 0 || ix >= w) continue;
                const Index wi = ((co * cin + ci) * k + ky) * k + kx;
                const Index xi = input.offset(n, ci, iy, ix);
                if (gw) (*gw)[wi] += g * x[xi];
                if (gx) (*gx)[xi] += g * wt[wi];
              }
            }
        }
}

template <typename Scalar>
void conv_forward_gemm(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                       Tensor<Scalar>& out) {
  const Index n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0), k = weight.dim(2);
  const Index pixels = h * w, depth = cin * k * k;
  ConstMatrixMap<Scalar> wm(weight.data().data(), cout, depth);
  const auto b = bias.data().matrix();
  RowMatrix<Scalar> col(k == 1 ? 0 : depth, k == 1 ? 0 : pixels);
  for (Index n = 0; n < n_batch; ++n) {
    const Scalar* x = input.data().data() + n * cin * pixels;
    MatrixMap<Scalar> y(out.data().data() + n * cout * pixels, cout, pixels);
    if (k == 1) {
      y.noalias() = wm * ConstMatrixMap<Scalar>(x, cin, pixels);
    } else {
      im2col3x3(x, cin, h, w, col.data());
      y.noalias() = wm * col;
    }
    y.colwise() += b;
  }
}

template <typename Scalar>
void conv_backward_gemm(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Buffer<Scalar>& gy,
                        Buffer<Scalar>* gx, Buffer<Scalar>* gw, Buffer<Scalar>* gb) {
  const Index n_batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0), k = weight.dim(2);
  const Index pixels = h * w, depth = cin * k * k;
  ConstMatrixMap<Scalar> wm(weight.data().data(), cout, depth);
  RowMatrix<Scalar> col(k == 1 ? 0 : depth, k == 1 ? 0 : pixels);
  RowMatrix<Scalar> dcol(k == 1 || !gx ? 0 : depth, k == 1 || !gx ? 0 : pixels);
  for (Index n = 0; n < n_batch; ++n) {
    const Scalar* x = input.data().data() + n * cin * pixels;
    ConstMatrixMap<Scalar> dy(gy.data() + n * cout * pixels, cout, pixels);
    if (gb) gb->matrix() += dy.rowwise().sum();
    if (gw) {
      MatrixMap<Scalar> dw(gw->data(), cout, depth);
      if (k == 1) {
        dw.noalias() += dy * ConstMatrixMap<Scalar>(x, cin, pixels).transpose();
      } else {
        im2col3x3(x, cin, h, w, col.data());
        dw.noalias() += dy * col.transpose();
      }
    }
    if (gx) {
      Scalar* dx = gx->data() + n * cin * pixels;
      if (k == 1) {
        MatrixMap<Scalar>(dx, cin, pixels).noalias() += wm.transpose() * dy;
      } else {
        dcol.noalias() = wm.transpose() * dy;
        col2im3x3(dcol.data(), cin, h, w, dx);
      }
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int pad, ConvAlgorithm algorithm) {
  const std::string op = "conv2d";
  require_rank4(op, input.shape());
  require_rank4(op, weight.shape());
  const Index k = weight.dim(2);
  if (weight.dim(3) != k || (k != 1 && k != 3)) {
    throw std::invalid_argument("conv2d: only square 1x1 or 3x3 kernels are supported, weight shape " +
                                shape_string(weight.shape()));
  }
  if (stride != 1) throw std::invalid_argument("conv2d: only stride 1 is supported");
  if (pad != k / 2) throw std::invalid_argument("conv2d: pad must be k/2 for same-padding");
  if (input.dim(1) != weight.dim(1)) shape_error(op, "input channels do not match weight", input.shape(), weight.shape());
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) shape_error(op, "bias does not match weight", bias.shape(), weight.shape());

  auto out = Tensor<Scalar>::zeros({input.dim(0), weight.dim(0), input.dim(2), input.dim(3)});
  if (algorithm == ConvAlgorithm::Direct) {
    conv_forward_direct(input, weight, bias, out);
  } else {
    conv_forward_gemm(input, weight, bias, out);
  }

  if (should_record<Scalar>({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [input, weight, bias, algorithm](const Buffer<Scalar>& gy) {
      Buffer<Scalar>* gx = input.requires_grad() ? &input.mutable_grad() : nullptr;
      Buffer<Scalar>* gw = weight.requires_grad() ? &weight.mutable_grad() : nullptr;
      Buffer<Scalar>* gb = bias.requires_grad() ? &bias.mutable_grad() : nullptr;
      if (algorithm == ConvAlgorithm::Direct) {
        conv_backward_direct(input, weight, gy, gx, gw, gb);
      } else {
        conv_backward_gemm(input, weight, gy, gx, gw, gb);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> batchnorm2d(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                           BatchNormState<Scalar>& stats, Mode mode, Scalar eps, Scalar momentum) {
  const std::string op = "batchnorm2d";
  require_rank4(op, input.shape());
  const Index n_batch = input.dim(0), channels = input.dim(1), pixels = input.dim(2) * input.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels) {
    shape_error(op, "affine parameters do not match channels", input.shape(), gamma.shape());
  }
  if (stats.running_mean.size() != channels) {
    throw std::invalid_argument(op + ": running statistics sized for " + std::to_string(stats.running_mean.size()) +
                                " channels, input has " + std::to_string(channels));
  }
  const Index count = n_batch * pixels;
  const auto& x = input.data();
  auto out = Tensor<Scalar>::zeros(input.shape());
  auto& y = out.data();

  Buffer<Scalar> mean(channels), inv_std(channels);
  if (mode == Mode::Train) {
    if (count < 2) {
      throw std::invalid_argument(op + ": train mode needs at least 2 values per channel, input " +
                                  shape_string(input.shape()));
    }
    for (Index c = 0; c < channels; ++c) {
      Scalar s = 0;
      for (Index n = 0; n < n_batch; ++n) s += x.segment((n * channels + c) * pixels, pixels).sum();
      const Scalar m = s / Scalar(count);
      Scalar ss = 0;
      for (Index n = 0; n < n_batch; ++n) ss += (x.segment((n * channels + c) * pixels, pixels) - m).square().sum();
      const Scalar var = ss / Scalar(count);
      mean[c] = m;
      inv_std[c] = Scalar(1) / std::sqrt(var + eps);
      stats.running_mean[c] = (Scalar(1) - momentum) * stats.running_mean[c] + momentum * m;
      stats.running_var[c] =
          (Scalar(1) - momentum) * stats.running_var[c] + momentum * var * Scalar(count) / Scalar(count - 1);
    }
    ++stats.num_batches_tracked;
  } else {
    if (!stats.initialized()) {
      throw std::logic_error(op + ": eval mode before running statistics were ever updated");
    }
    mean = stats.running_mean;
    inv_std = (stats.running_var + eps).sqrt().inverse();
  }

  // Normalized activations are kept for the backward pass.
  auto xhat = std::make_shared<Buffer<Scalar>>(x.size());
  for (Index n = 0; n < n_batch; ++n)
    for (Index c = 0; c < channels; ++c) {
      const Index off = (n * channels + c) * pixels;
      xhat->segment(off, pixels) = (x.segment(off, pixels) - mean[c]) * inv_std[c];
      y.segment(off, pixels) = xhat->segment(off, pixels) * gamma.data()[c] + beta.data()[c];
    }

  if (should_record<Scalar>({&input, &gamma, &beta})) {
    out.set_requires_grad(true);
    const bool train = mode == Mode::Train;
    Tape<Scalar>::active().record(
        out, [input, gamma, beta, xhat, inv_std, train, n_batch, channels, pixels](const Buffer<Scalar>& gy) {
          const Scalar count = Scalar(n_batch * pixels);
          for (Index c = 0; c < channels; ++c) {
            Scalar sum_dy = 0, sum_dy_xhat = 0;
            for (Index n = 0; n < n_batch; ++n) {
              const Index off = (n * channels + c) * pixels;
              sum_dy += gy.segment(off, pixels).sum();
              sum_dy_xhat += (gy.segment(off, pixels) * xhat->segment(off, pixels)).sum();
            }
            if (gamma.requires_grad()) gamma.mutable_grad()[c] += sum_dy_xhat;
            if (beta.requires_grad()) beta.mutable_grad()[c] += sum_dy;
            if (!input.requires_grad()) continue;
            auto& gx = input.mutable_grad();
            const Scalar g = gamma.data()[c] * inv_std[c];
            for (Index n = 0; n < n_batch; ++n) {
              const Index off = (n * channels + c) * pixels;
              if (train) {
                gx.segment(off, pixels) +=
                    (g / count) * (count * gy.segment(off, pixels) - sum_dy - xhat->segment(off, pixels) * sum_dy_xhat);
              } else {
                gx.segment(off, pixels) += g * gy.segment(off, pixels);
              }
            }
          }
        });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  auto out = Tensor<Scalar>::from_data(input.shape(), input.data().max(Scalar(0)));
  if (should_record<Scalar>({&input})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [input](const Buffer<Scalar>& gy) {
      input.mutable_grad() += (input.data() > Scalar(0)).select(gy, Scalar(0));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& input) {
  const auto& x = input.data();
  Buffer<Scalar> y(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    if (x[i] >= 0) {
      y[i] = Scalar(1) / (Scalar(1) + std::exp(-x[i]));
    } else {
      const Scalar e = std::exp(x[i]);
      y[i] = e / (Scalar(1) + e);
    }
  }
  auto out = Tensor<Scalar>::from_data(input.shape(), std::move(y));
  if (should_record<Scalar>({&input})) {
    out.set_requires_grad(true);
    auto saved = out.handle();
    Tape<Scalar>::active().record(out, [input, saved](const Buffer<Scalar>& gy) {
      const auto& s = saved->data;
      input.mutable_grad() += gy * s * (Scalar(1) - s);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> maxpool2x2(const Tensor<Scalar>& input) {
  require_rank4("maxpool2x2", input.shape());
  const Index n_batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2x2: spatial extents must be even, got " + shape_string(input.shape()));
  }
  const Index oh = h / 2, ow = w / 2;
  auto out = Tensor<Scalar>::zeros({n_batch, channels, oh, ow});
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.numel()));
  const auto& x = input.data();
  auto& y = out.data();
  Index o = 0;
  for (Index plane = 0; plane < n_batch * channels; ++plane) {
    const Index base = plane * h * w;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox, ++o) {
        const Index i00 = base + (2 * oy) * w + 2 * ox;
        const Index candidates[4] = {i00, i00 + 1, i00 + w, i00 + w + 1};
        Index best = candidates[0];
        for (int j = 1; j < 4; ++j)
          if (x[candidates[j]] > x[best]) best = candidates[j];
        y[o] = x[best];
        (*argmax)[static_cast<std::size_t>(o)] = best;
      }
  }
  if (should_record<Scalar>({&input})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [input, argmax](const Buffer<Scalar>& gy) {
      auto& gx = input.mutable_grad();
      for (Index o = 0; o < gy.size(); ++o) gx[(*argmax)[static_cast<std::size_t>(o)]] += gy[o];
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& input, UpsampleMode /*mode*/) {
  require_rank4("upsample2x", input.shape());
  const Index planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  auto out = Tensor<Scalar>::zeros({input.dim(0), input.dim(1), 2 * h, 2 * w});
  const auto& x = input.data();
  auto& y = out.data();
  for (Index p = 0; p < planes; ++p)
    for (Index oy = 0; oy < 2 * h; ++oy) {
      const Scalar* src = x.data() + (p * h + oy / 2) * w;
      Scalar* dst = y.data() + (p * 2 * h + oy) * 2 * w;
      for (Index ox = 0; ox < 2 * w; ++ox) dst[ox] = src[ox / 2];
    }
  if (should_record<Scalar>({&input})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [input, planes, h, w](const Buffer<Scalar>& gy) {
      auto& gx = input.mutable_grad();
      for (Index p = 0; p < planes; ++p)
        for (Index oy = 0; oy < 2 * h; ++oy) {
          const Scalar* src = gy.data() + (p * 2 * h + oy) * 2 * w;
          Scalar* dst = gx.data() + (p * h + oy / 2) * w;
          for (Index ox = 0; ox < 2 * w; ++ox) dst[ox / 2] += src[ox];
        }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const std::string op = "concat_channels";
  require_rank4(op, a.shape());
  require_rank4(op, b.shape());
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    shape_error(op, "batch or spatial extents differ", a.shape(), b.shape());
  }
  const Index n_batch = a.dim(0), ca = a.dim(1), cb = b.dim(1), pixels = a.dim(2) * a.dim(3);
  auto out = Tensor<Scalar>::zeros({n_batch, ca + cb, a.dim(2), a.dim(3)});
  auto& y = out.data();
  for (Index n = 0; n < n_batch; ++n) {
    y.segment(n * (ca + cb) * pixels, ca * pixels) = a.data().segment(n * ca * pixels, ca * pixels);
    y.segment((n * (ca + cb) + ca) * pixels, cb * pixels) = b.data().segment(n * cb * pixels, cb * pixels);
  }
  if (should_record<Scalar>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [a, b, n_batch, ca, cb, pixels](const Buffer<Scalar>& gy) {
      for (Index n = 0; n < n_batch; ++n) {
        if (a.requires_grad())
          a.mutable_grad().segment(n * ca * pixels, ca * pixels) += gy.segment(n * (ca + cb) * pixels, ca * pixels);
        if (b.requires_grad())
          b.mutable_grad().segment(n * cb * pixels, cb * pixels) +=
              gy.segment((n * (ca + cb) + ca) * pixels, cb * pixels);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_channels(const Tensor<Scalar>& input, Index begin, Index end) {
  require_rank4("slice_channels", input.shape());
  const Index channels = input.dim(1);
  if (begin < 0 || end > channels || begin >= end) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                ") outside " + shape_string(input.shape()));
  }
  const Index n_batch = input.dim(0), pixels = input.dim(2) * input.dim(3), width = end - begin;
  auto out = Tensor<Scalar>::zeros({n_batch, width, input.dim(2), input.dim(3)});
  for (Index n = 0; n < n_batch; ++n)
    out.data().segment(n * width * pixels, width * pixels) =
        input.data().segment((n * channels + begin) * pixels, width * pixels);
  if (should_record<Scalar>({&input})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [input, n_batch, channels, begin, width, pixels](const Buffer<Scalar>& gy) {
      auto& gx = input.mutable_grad();
      for (Index n = 0; n < n_batch; ++n)
        gx.segment((n * channels + begin) * pixels, width * pixels) += gy.segment(n * width * pixels, width * pixels);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul_broadcast_channel(const Tensor<Scalar>& features, const Tensor<Scalar>& map) {
  const std::string op = "mul_broadcast_channel";
  require_rank4(op, features.shape());
  require_rank4(op, map.shape());
  if (map.dim(1) != 1 || map.dim(0) != features.dim(0) || map.dim(2) != features.dim(2) ||
      map.dim(3) != features.dim(3)) {
    shape_error(op, "map must be [N,1,H,W] matching the features", features.shape(), map.shape());
  }
  const Index n_batch = features.dim(0), channels = features.dim(1), pixels = features.dim(2) * features.dim(3);
  auto out = Tensor<Scalar>::zeros(features.shape());
  for (Index n = 0; n < n_batch; ++n) {
    const auto m = map.data().segment(n * pixels, pixels);
    for (Index c = 0; c < channels; ++c) {
      const Index off = (n * channels + c) * pixels;
      out.data().segment(off, pixels) = features.data().segment(off, pixels) * m;
    }
  }
  if (should_record<Scalar>({&features, &map})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [features, map, n_batch, channels, pixels](const Buffer<Scalar>& gy) {
      for (Index n = 0; n < n_batch; ++n) {
        for (Index c = 0; c < channels; ++c) {
          const Index off = (n * channels + c) * pixels;
          if (features.requires_grad())
            features.mutable_grad().segment(off, pixels) += gy.segment(off, pixels) * map.data().segment(n * pixels, pixels);
          if (map.requires_grad())
            map.mutable_grad().segment(n * pixels, pixels) += gy.segment(off, pixels) * features.data().segment(off, pixels);
        }
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) shape_error("add", "shapes differ", a.shape(), b.shape());
  auto out = Tensor<Scalar>::from_data(a.shape(), a.data() + b.data());
  if (should_record<Scalar>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [a, b](const Buffer<Scalar>& gy) {
      if (a.requires_grad()) a.mutable_grad() += gy;
      if (b.requires_grad()) b.mutable_grad() += gy;
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) shape_error("mul", "shapes differ", a.shape(), b.shape());
  auto out = Tensor<Scalar>::from_data(a.shape(), a.data() * b.data());
  if (should_record<Scalar>({&a, &b})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [a, b](const Buffer<Scalar>& gy) {
      if (a.requires_grad()) a.mutable_grad() += gy * b.data();
      if (b.requires_grad()) b.mutable_grad() += gy * a.data();
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  auto out = Tensor<Scalar>::from_data(a.shape(), a.data() * factor);
  if (should_record<Scalar>({&a})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [a, factor](const Buffer<Scalar>& gy) { a.mutable_grad() += gy * factor; });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  auto out = Tensor<Scalar>::scalar(a.data().sum());
  if (should_record<Scalar>({&a})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [a](const Buffer<Scalar>& gy) { a.mutable_grad() += gy[0]; });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> squared_error_sum(const Tensor<Scalar>& pred, const Tensor<Scalar>& target, Scalar factor) {
  if (pred.shape() != target.shape()) shape_error("squared_error_sum", "shapes differ", pred.shape(), target.shape());
  auto out = Tensor<Scalar>::scalar((pred.data() - target.data()).square().sum() * factor);
  if (should_record<Scalar>({&pred})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [pred, target, factor](const Buffer<Scalar>& gy) {
      pred.mutable_grad() += (pred.data() - target.data()) * (Scalar(2) * factor * gy[0]);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> bce_with_logits_sum(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, Scalar factor) {
  if (logits.shape() != target.shape()) {
    shape_error("bce_with_logits_sum", "shapes differ", logits.shape(), target.shape());
  }
  const auto& z = logits.data();
  const auto& t = target.data();
  const Scalar total = (z.max(Scalar(0)) - z * t + (-z.abs()).exp().log1p()).sum();
  auto out = Tensor<Scalar>::scalar(total * factor);
  if (should_record<Scalar>({&logits})) {
    out.set_requires_grad(true);
    Tape<Scalar>::active().record(out, [logits, target, factor](const Buffer<Scalar>& gy) {
      const auto& z = logits.data();
      Buffer<Scalar> p(z.size());
      for (Index i = 0; i < z.size(); ++i) {
        p[i] = z[i] >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-z[i])) : std::exp(z[i]) / (Scalar(1) + std::exp(z[i]));
      }
      logits.mutable_grad() += (p - target.data()) * (factor * gy[0]);
    });
  }
  return out;
}

#define SFANET_INSTANTIATE_OPS(S)                                                                              \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int, ConvAlgorithm);   \
  template Tensor<S> batchnorm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, BatchNormState<S>&,     \
                                 Mode, S, S);                                                                  \
  template Tensor<S> relu(const Tensor<S>&);                                                                   \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                                \
  template Tensor<S> maxpool2x2(const Tensor<S>&);                                                             \
  template Tensor<S> upsample2x(const Tensor<S>&, UpsampleMode);                                               \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> slice_channels(const Tensor<S>&, Index, Index);                                           \
  template Tensor<S> mul_broadcast_channel(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                  \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                  \
  template Tensor<S> scale(const Tensor<S>&, S);                                                               \
  template Tensor<S> sum(const Tensor<S>&);                                                                    \
  template Tensor<S> squared_error_sum(const Tensor<S>&, const Tensor<S>&, S);                                 \
  template Tensor<S> bce_with_logits_sum(const Tensor<S>&, const Tensor<S>&, S);

SFANET_INSTANTIATE_OPS(float)
SFANET_INSTANTIATE_OPS(double)

#undef SFANET_INSTANTIATE_OPS

}  // namespace sfanet
