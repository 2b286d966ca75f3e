#include "latentshift/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace latentshift {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

/// Sliding-window geometry shared by conv2d (image -> windows) and its
/// transpose (windows -> image). `big` is the padded-side image, `small` the
/// strided side.
struct Window {
  Index channels;
  Index big_h, big_w;
  Index small_h, small_w;
  Index kernel, stride, pad;
};

Window conv_window(const LayerSpec& l, const Shape& in, const Shape& out) {
  const Index pad = l.padding == Padding::Same ? (l.kernel - 1) / 2 : 0;
  if (l.kind == LayerKind::Conv2d) return {in[0], in[1], in[2], out[1], out[2], l.kernel, l.stride, pad};
  return {out[0], out[1], out[2], in[1], in[2], l.kernel, l.stride, pad};
}

// cols: (C·k·k) × (small_h·small_w), row-major.
RowMatrix im2col(const double* img, const Window& w) {
  const Index k = w.kernel;
  RowMatrix cols(w.channels * k * k, w.small_h * w.small_w);
  for (Index c = 0; c < w.channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        double* row = cols.row((c * k + ky) * k + kx).data();
        for (Index oy = 0; oy < w.small_h; ++oy) {
          const Index y = oy * w.stride - w.pad + ky;
          double* dst = row + oy * w.small_w;
          if (y < 0 || y >= w.big_h) {
            std::fill(dst, dst + w.small_w, 0.0);
            continue;
          }
          const double* src = img + (c * w.big_h + y) * w.big_w;
          for (Index ox = 0; ox < w.small_w; ++ox) {
            const Index x = ox * w.stride - w.pad + kx;
            dst[ox] = (x < 0 || x >= w.big_w) ? 0.0 : src[x];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const RowMatrix& cols, double* img, const Window& w) {
  const Index k = w.kernel;
  for (Index c = 0; c < w.channels; ++c) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const double* row = cols.row((c * k + ky) * k + kx).data();
        for (Index oy = 0; oy < w.small_h; ++oy) {
          const Index y = oy * w.stride - w.pad + ky;
          if (y < 0 || y >= w.big_h) continue;
          double* dst = img + (c * w.big_h + y) * w.big_w;
          const double* src = row + oy * w.small_w;
          for (Index ox = 0; ox < w.small_w; ++ox) {
            const Index x = ox * w.stride - w.pad + kx;
            if (x >= 0 && x < w.big_w) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor forward_layer(const LayerSpec& l, const std::vector<const Tensor*>& in, const Shape& out_shape) {
  const Tensor& x = *in.front();
  Tensor y(out_shape);
  switch (l.kind) {
    case LayerKind::Dense: {
      ConstRowMap w(l.param("weight").data(), l.out_features, l.in_features);
      y.vec().noalias() = w * x.vec();
      y.vec() += l.param("bias").vec();
      break;
    }
    case LayerKind::Conv2d: {
      const Window win = conv_window(l, x.shape(), out_shape);
      const RowMatrix cols = im2col(x.data(), win);
      ConstRowMap w(l.param("weight").data(), l.out_channels, l.in_channels * l.kernel * l.kernel);
      RowMap out(y.data(), l.out_channels, win.small_h * win.small_w);
      out.noalias() = w * cols;
      out.colwise() += l.param("bias").vec();
      break;
    }
    case LayerKind::TransposedConv2d: {
      const Window win = conv_window(l, x.shape(), out_shape);
      ConstRowMap w(l.param("weight").data(), l.in_channels, l.out_channels * l.kernel * l.kernel);
      ConstRowMap xin(x.data(), l.in_channels, win.small_h * win.small_w);
      const RowMatrix cols = w.transpose() * xin;
      col2im_add(cols, y.data(), win);
      RowMap out(y.data(), l.out_channels, win.big_h * win.big_w);
      out.colwise() += l.param("bias").vec();
      break;
    }
    case LayerKind::Relu:
      y.vec() = x.vec().cwiseMax(0.0);
      break;
    case LayerKind::Sigmoid:
      y.vec() = x.vec().unaryExpr(&stable_sigmoid);
      break;
    case LayerKind::ResidualAdd:
      y.vec() = x.vec() + in[1]->vec();
      break;
    case LayerKind::AvgPool2: {
      const Index c = out_shape[0], h = out_shape[1], w = out_shape[2];
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j)
            y.at(ch, i, j) = 0.25 * (x.at(ch, 2 * i, 2 * j) + x.at(ch, 2 * i, 2 * j + 1) +
                                     x.at(ch, 2 * i + 1, 2 * j) + x.at(ch, 2 * i + 1, 2 * j + 1));
      break;
    }
    case LayerKind::Upsample2x: {
      const Index c = out_shape[0], h = out_shape[1], w = out_shape[2];
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) y.at(ch, i, j) = x.at(ch, i / 2, j / 2);
      break;
    }
    case LayerKind::Flatten:
    case LayerKind::Reshape:
      y.vec() = x.vec();
      break;
    case LayerKind::Scale:
      y.vec() = l.factor * x.vec();
      break;
  }
  return y;
}

/// Accumulates input gradients into `grad_in` (one per source) and parameter
/// gradients into `grad_params` when non-null.
void backward_layer(const LayerSpec& l, const std::vector<const Tensor*>& in, const Tensor& y,
                    const Tensor& dy, GradientMode mode, std::vector<Tensor*>& grad_in,
                    GradientSet* grad_params) {
  const Tensor& x = *in.front();
  Tensor& dx = *grad_in.front();
  auto param_grad = [&](const char* name) -> Tensor& {
    return grad_params->at(l.name + "/" + name);
  };
  switch (l.kind) {
    case LayerKind::Dense: {
      ConstRowMap w(l.param("weight").data(), l.out_features, l.in_features);
      dx.vec().noalias() += w.transpose() * dy.vec();
      if (grad_params) {
        RowMap dw(param_grad("weight").data(), l.out_features, l.in_features);
        dw.noalias() += dy.vec() * x.vec().transpose();
        param_grad("bias").vec() += dy.vec();
      }
      break;
    }
    case LayerKind::Conv2d: {
      const Window win = conv_window(l, x.shape(), y.shape());
      const Index kk = l.in_channels * l.kernel * l.kernel;
      ConstRowMap w(l.param("weight").data(), l.out_channels, kk);
      ConstRowMap dout(dy.data(), l.out_channels, win.small_h * win.small_w);
      const RowMatrix dcols = w.transpose() * dout;
      col2im_add(dcols, dx.data(), win);
      if (grad_params) {
        const RowMatrix cols = im2col(x.data(), win);
        RowMap dw(param_grad("weight").data(), l.out_channels, kk);
        dw.noalias() += dout * cols.transpose();
        param_grad("bias").vec() += dout.rowwise().sum();
      }
      break;
    }
    case LayerKind::TransposedConv2d: {
      const Window win = conv_window(l, x.shape(), y.shape());
      const Index kk = l.out_channels * l.kernel * l.kernel;
      ConstRowMap w(l.param("weight").data(), l.in_channels, kk);
      const RowMatrix dcols = im2col(dy.data(), win);
      RowMap dxin(dx.data(), l.in_channels, win.small_h * win.small_w);
      dxin.noalias() += w * dcols;
      if (grad_params) {
        ConstRowMap xin(x.data(), l.in_channels, win.small_h * win.small_w);
        RowMap dw(param_grad("weight").data(), l.in_channels, kk);
        dw.noalias() += xin * dcols.transpose();
        ConstRowMap dout(dy.data(), l.out_channels, win.big_h * win.big_w);
        param_grad("bias").vec() += dout.rowwise().sum();
      }
      break;
    }
    case LayerKind::Relu:
      if (mode == GradientMode::Guided) {
        for (Index i = 0; i < x.size(); ++i)
          if (x[i] > 0.0 && dy[i] > 0.0) dx[i] += dy[i];
      } else {
        for (Index i = 0; i < x.size(); ++i)
          if (x[i] > 0.0) dx[i] += dy[i];
      }
      break;
    case LayerKind::Sigmoid:
      dx.vec().array() += dy.vec().array() * y.vec().array() * (1.0 - y.vec().array());
      break;
    case LayerKind::ResidualAdd:
      dx.vec() += dy.vec();
      grad_in[1]->vec() += dy.vec();
      break;
    case LayerKind::AvgPool2: {
      const Index c = y.dim(0), h = y.dim(1), w = y.dim(2);
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) {
            const double g = 0.25 * dy.at(ch, i, j);
            dx.at(ch, 2 * i, 2 * j) += g;
            dx.at(ch, 2 * i, 2 * j + 1) += g;
            dx.at(ch, 2 * i + 1, 2 * j) += g;
            dx.at(ch, 2 * i + 1, 2 * j + 1) += g;
          }
      break;
    }
    case LayerKind::Upsample2x: {
      const Index c = y.dim(0), h = y.dim(1), w = y.dim(2);
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) dx.at(ch, i / 2, j / 2) += dy.at(ch, i, j);
      break;
    }
    case LayerKind::Flatten:
    case LayerKind::Reshape:
      dx.vec() += dy.vec();
      break;
    case LayerKind::Scale:
      dx.vec() += l.factor * dy.vec();
      break;
  }
}

std::vector<const Tensor*> gather(const ModelGraph& model, const Tape& tape, Index i) {
  std::vector<const Tensor*> in;
  for (Index s : model.sources(i)) in.push_back(&tape.value(s));
  return in;
}

}  // namespace

Tape forward_tape(const ModelGraph& model, const Tensor& input) {
  if (input.shape() != model.input_shape()) {
    const std::string first = model.size() ? model.layer(0).name : std::string(ModelGraph::kInputName);
    throw ShapeError(first, "input shape " + shape_string(input.shape()) + " does not match declared " +
                                shape_string(model.input_shape()));
  }
  Tape tape;
  tape.input = input;
  tape.outputs.reserve(static_cast<std::size_t>(model.size()));
  for (Index i = 0; i < model.size(); ++i) {
    const LayerSpec& l = model.layer(i);
    Tensor y = forward_layer(l, gather(model, tape, i), model.shape_of(i));
    if (!y.all_finite()) throw std::domain_error("layer '" + l.name + "' produced non-finite values");
    tape.outputs.push_back(std::move(y));
  }
  return tape;
}

Tensor forward(const ModelGraph& model, const Tensor& input) {
  if (model.size() == 0) return input;
  return forward_tape(model, input).output();
}

BackwardResult backward(const ModelGraph& model, const Tape& tape, const Tensor& upstream,
                        const BackwardOptions& options) {
  const Index seed = options.node.empty() ? model.size() - 1 : model.index_of(options.node);
  BackwardResult result;
  result.input = Tensor(model.input_shape());
  if (options.parameters) {
    model.for_each_parameter(
        [&](const std::string& key, const Tensor& p) { result.params.emplace(key, Tensor(p.shape())); });
  }
  if (seed < 0) {
    result.input = upstream;
    return result;
  }
  if (upstream.shape() != model.shape_of(seed)) {
    throw ShapeError(model.layer(seed).name, "upstream gradient shape " + shape_string(upstream.shape()) +
                                                 " does not match " + shape_string(model.shape_of(seed)));
  }
  std::vector<Tensor> grads(static_cast<std::size_t>(seed + 1));
  std::vector<bool> live(static_cast<std::size_t>(seed + 1), false);
  grads[static_cast<std::size_t>(seed)] = upstream;
  live[static_cast<std::size_t>(seed)] = true;
  for (Index i = seed; i >= 0; --i) {
    if (!live[static_cast<std::size_t>(i)]) continue;
    std::vector<Tensor*> grad_in;
    for (Index s : model.sources(i)) {
      if (s < 0) {
        grad_in.push_back(&result.input);
        continue;
      }
      auto& g = grads[static_cast<std::size_t>(s)];
      if (!live[static_cast<std::size_t>(s)]) {
        g = Tensor(model.shape_of(s));
        live[static_cast<std::size_t>(s)] = true;
      }
      grad_in.push_back(&g);
    }
    backward_layer(model.layer(i), gather(model, tape, i), tape.outputs[static_cast<std::size_t>(i)],
                   grads[static_cast<std::size_t>(i)], options.mode, grad_in,
                   options.parameters ? &result.params : nullptr);
    grads[static_cast<std::size_t>(i)] = Tensor();
  }
  return result;
}

Tensor input_gradient(const ModelGraph& model, const Tensor& input, Index output_index,
                      GradientMode mode, std::string_view node) {
  const Tape tape = forward_tape(model, input);
  const Index seed = node.empty() ? model.size() - 1 : model.index_of(node);
  const Shape& out_shape = seed < 0 ? model.input_shape() : model.shape_of(seed);
  if (output_index < 0 || output_index >= shape_size(out_shape)) {
    throw std::out_of_range("output index " + std::to_string(output_index) + " out of range for output " +
                            shape_string(out_shape));
  }
  Tensor upstream(out_shape);
  upstream[output_index] = 1.0;
  BackwardOptions opts;
  opts.mode = mode;
  opts.node = std::string(node);
  return backward(model, tape, upstream, opts).input;
}

LossGradients parameter_gradients(const ModelGraph& model, const Tensor& input, const LossFunction& loss) {
  const Tape tape = forward_tape(model, input);
  Tensor grad_out(model.output_shape());
  LossGradients result;
  result.loss = loss(tape.output(), grad_out);
  BackwardOptions opts;
  opts.parameters = true;
  result.params = backward(model, tape, grad_out, opts).params;
  return result;
}

}  // namespace latentshift
