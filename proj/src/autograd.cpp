#include "ser/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace ser::ag {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
Eigen::Map<const Vector<T>> segment(const Vector<T>& v, Index offset, Index n) {
  return Eigen::Map<const Vector<T>>(v.data() + offset, n);
}

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw Error(ErrorCode::ShapeMismatch, op + ": " + detail);
}

// Image-style geometry for rank-3 [C x H x W] or rank-4 [N x C x H x W].
struct ImageDims {
  bool batched;
  Index n, c, h, w;
};

template <typename T>
ImageDims image_dims(const Tensor<T>& x, const char* op) {
  if (x.rank() == 3) return {false, 1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {true, x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  shape_error(op, "expected rank 3 or 4 input, got " + shape_string(x.shape()));
}

Shape image_shape(const ImageDims& d, Index c, Index h, Index w) {
  return d.batched ? Shape{d.n, c, h, w} : Shape{c, h, w};
}

// Unfolds one sample [C x H x W] into (C*kh*kw) x (Ho*Wo) patch columns.
template <typename T>
void im2col(const T* in, Index c_in, Index h, Index w, Index kh, Index kw, RowMatrix<T>& cols) {
  const Index ho = h - kh + 1, wo = w - kw + 1, p = ho * wo;
  cols.resize(c_in * kh * kw, p);
  for (Index c = 0; c < c_in; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        T* dst = cols.data() + ((c * kh + i) * kw + j) * p;
        const T* src = in + c * h * w + i * w + j;
        for (Index y = 0; y < ho; ++y) std::copy_n(src + y * w, wo, dst + y * wo);
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, Index c_in, Index h, Index w, Index kh, Index kw, T* out) {
  const Index ho = h - kh + 1, wo = w - kw + 1, p = ho * wo;
  for (Index c = 0; c < c_in; ++c) {
    for (Index i = 0; i < kh; ++i) {
      for (Index j = 0; j < kw; ++j) {
        const T* src = cols.data() + ((c * kh + i) * kw + j) * p;
        T* dst = out + c * h * w + i * w + j;
        for (Index y = 0; y < ho; ++y) {
          Eigen::Map<Vector<T>>(dst + y * w, wo) += Eigen::Map<const Vector<T>>(src + y * wo, wo);
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("add", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  ImplPtr<T> ia = a.impl(), ib = b.impl();
  return detail::make_result<T>(a.shape(), a.values() + b.values(), {a, b}, "add",
                                [ia, ib](const Vector<T>&, const Vector<T>& g) {
                                  if (ia->requires_grad) ia->grad_buffer() += g;
                                  if (ib->requires_grad) ib->grad_buffer() += g;
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  ImplPtr<T> ia = a.impl();
  return detail::make_result<T>(a.shape(), a.values() * factor, {a}, "scale",
                                [ia, factor](const Vector<T>&, const Vector<T>& g) {
                                  ia->grad_buffer() += g * factor;
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  ImplPtr<T> ia = a.impl();
  Vector<T> v(1);
  v[0] = a.values().sum();
  return detail::make_result<T>(Shape{}, std::move(v), {a}, "sum",
                                [ia](const Vector<T>&, const Vector<T>& g) {
                                  ia->grad_buffer().array() += g[0];
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    shape_error("reshape", shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  ImplPtr<T> ia = a.impl();
  return detail::make_result<T>(std::move(shape), a.values(), {a}, "reshape",
                                [ia](const Vector<T>&, const Vector<T>& g) { ia->grad_buffer() += g; });
}

template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias) {
  const ImageDims d = image_dims(input, "conv2d_valid");
  if (kernels.rank() != 4 || bias.rank() != 1) {
    shape_error("conv2d_valid", "kernels must be rank 4 and bias rank 1");
  }
  const Index c_out = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != d.c) {
    shape_error("conv2d_valid", "kernel expects " + std::to_string(kernels.dim(1)) + " channels, input has " +
                                    std::to_string(d.c));
  }
  if (kh > d.h || kw > d.w) {
    shape_error("conv2d_valid", "kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " larger than input " + std::to_string(d.h) + "x" + std::to_string(d.w));
  }
  if (bias.dim(0) != c_out) shape_error("conv2d_valid", "bias length must equal output channels");

  const Index ho = d.h - kh + 1, wo = d.w - kw + 1, p = ho * wo, kc = d.c * kh * kw;
  const Index in_stride = d.c * d.h * d.w, out_stride = c_out * p;
  ConstMatrixMap<T> k(kernels.values().data(), c_out, kc);
  Vector<T> out(d.n * out_stride);
  RowMatrix<T> cols;
  for (Index n = 0; n < d.n; ++n) {
    im2col(input.values().data() + n * in_stride, d.c, d.h, d.w, kh, kw, cols);
    MatrixMap<T> o(out.data() + n * out_stride, c_out, p);
    o.noalias() = k * cols;
    o.colwise() += bias.values();
  }

  ImplPtr<T> ii = input.impl(), ik = kernels.impl(), ib = bias.impl();
  return detail::make_result<T>(
      image_shape(d, c_out, ho, wo), std::move(out), {input, kernels, bias}, "conv2d_valid",
      [=](const Vector<T>&, const Vector<T>& g) {
        ConstMatrixMap<T> kmat(ik->values.data(), c_out, kc);
        RowMatrix<T> patches, dcols;
        for (Index n = 0; n < d.n; ++n) {
          ConstMatrixMap<T> go(g.data() + n * out_stride, c_out, p);
          if (ik->requires_grad) {
            im2col(ii->values.data() + n * in_stride, d.c, d.h, d.w, kh, kw, patches);
            MatrixMap<T> dk(ik->grad_buffer().data(), c_out, kc);
            dk.noalias() += go * patches.transpose();
          }
          if (ib->requires_grad) ib->grad_buffer() += go.rowwise().sum();
          if (ii->requires_grad) {
            dcols.noalias() = kmat.transpose() * go;
            col2im_add(dcols, d.c, d.h, d.w, kh, kw, ii->grad_buffer().data() + n * in_stride);
          }
        }
      });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Index pool_h, Index pool_w) {
  const ImageDims d = image_dims(input, "maxpool2d");
  if (pool_h < 1 || pool_w < 1 || pool_h > d.h || pool_w > d.w) {
    shape_error("maxpool2d", "pool " + std::to_string(pool_h) + "x" + std::to_string(pool_w) +
                                 " does not fit input " + shape_string(input.shape()));
  }
  const Index ho = d.h / pool_h, wo = d.w / pool_w;
  const Index planes = d.n * d.c;
  Vector<T> out(planes * ho * wo);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(out.size()));
  const T* in = input.values().data();
  for (Index plane = 0; plane < planes; ++plane) {
    const Index base = plane * d.h * d.w;
    for (Index y = 0; y < ho; ++y) {
      for (Index x = 0; x < wo; ++x) {
        Index best = base + y * pool_h * d.w + x * pool_w;
        for (Index i = 0; i < pool_h; ++i) {
          for (Index j = 0; j < pool_w; ++j) {
            const Index idx = base + (y * pool_h + i) * d.w + x * pool_w + j;
            if (in[idx] > in[best]) best = idx;
          }
        }
        const Index o = (plane * ho + y) * wo + x;
        out[o] = in[best];
        (*argmax)[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  ImplPtr<T> ii = input.impl();
  return detail::make_result<T>(image_shape(d, d.c, ho, wo), std::move(out), {input}, "maxpool2d",
                                [ii, argmax](const Vector<T>&, const Vector<T>& g) {
                                  Vector<T>& gi = ii->grad_buffer();
                                  for (Index o = 0; o < g.size(); ++o) {
                                    gi[(*argmax)[static_cast<std::size_t>(o)]] += g[o];
                                  }
                                });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  ImplPtr<T> ix = x.impl();
  return detail::make_result<T>(x.shape(), x.values().cwiseMax(T(0)), {x}, "relu",
                                [ix](const Vector<T>&, const Vector<T>& g) {
                                  ix->grad_buffer().array() +=
                                      (ix->values.array() > T(0)).select(g.array(), T(0));
                                });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Vector<T> y(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const T v = x.values()[i];
    if (v >= T(0)) {
      y[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  ImplPtr<T> ix = x.impl();
  return detail::make_result<T>(x.shape(), std::move(y), {x}, "sigmoid",
                                [ix](const Vector<T>& out, const Vector<T>& g) {
                                  ix->grad_buffer().array() += g.array() * out.array() * (T(1) - out.array());
                                });
}

template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  return kind == Activation::Relu ? relu(x) : sigmoid(x);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    shape_error("linear", "expected x rank 2, weight rank 2, bias rank 1");
  }
  const Index n = x.dim(0), d_in = x.dim(1), d_out = weight.dim(1);
  if (weight.dim(0) != d_in) {
    shape_error("linear", shape_string(x.shape()) + " . " + shape_string(weight.shape()));
  }
  if (bias.dim(0) != d_out) shape_error("linear", "bias length must equal output width");

  Vector<T> out(n * d_out);
  MatrixMap<T> o(out.data(), n, d_out);
  o.noalias() = ConstMatrixMap<T>(x.values().data(), n, d_in) *
                ConstMatrixMap<T>(weight.values().data(), d_in, d_out);
  o.rowwise() += bias.values().transpose();

  ImplPtr<T> ix = x.impl(), iw = weight.impl(), ib = bias.impl();
  return detail::make_result<T>(
      Shape{n, d_out}, std::move(out), {x, weight, bias}, "linear",
      [=](const Vector<T>&, const Vector<T>& g) {
        ConstMatrixMap<T> go(g.data(), n, d_out);
        if (ix->requires_grad) {
          MatrixMap<T>(ix->grad_buffer().data(), n, d_in).noalias() +=
              go * ConstMatrixMap<T>(iw->values.data(), d_in, d_out).transpose();
        }
        if (iw->requires_grad) {
          MatrixMap<T>(iw->grad_buffer().data(), d_in, d_out).noalias() +=
              ConstMatrixMap<T>(ix->values.data(), n, d_in).transpose() * go;
        }
        if (ib->requires_grad) ib->grad_buffer() += go.colwise().sum().transpose();
      });
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, Mode mode) {
  if (x.rank() != 2) shape_error("batchnorm", "expected [n x d] input");
  const Index n = x.dim(0), d = x.dim(1);
  if (gamma.size() != d || beta.size() != d || state.running_mean.size() != d ||
      state.running_var.size() != d) {
    shape_error("batchnorm", "parameter width must equal feature width " + std::to_string(d));
  }
  ConstMatrixMap<T> xm(x.values().data(), n, d);
  ImplPtr<T> ix = x.impl(), ig = gamma.impl(), ib = beta.impl();
  Vector<T> out(n * d);
  MatrixMap<T> o(out.data(), n, d);

  if (mode == Mode::Eval) {
    const Vector<T> inv_std = (state.running_var.array() + state.epsilon).rsqrt().matrix();
    RowMatrix<T> xhat = (xm.rowwise() - state.running_mean.transpose()).array().rowwise() *
                        inv_std.transpose().array();
    o = (xhat.array().rowwise() * gamma.values().transpose().array()).rowwise() +
        beta.values().transpose().array();
    return detail::make_result<T>(
        Shape{n, d}, std::move(out), {x, gamma, beta}, "batchnorm_eval",
        [=, xhat = std::move(xhat)](const Vector<T>&, const Vector<T>& g) {
          ConstMatrixMap<T> go(g.data(), n, d);
          if (ix->requires_grad) {
            MatrixMap<T>(ix->grad_buffer().data(), n, d).array() +=
                go.array().rowwise() * (ig->values.array() * inv_std.array()).transpose();
          }
          if (ig->requires_grad) ig->grad_buffer() += (go.array() * xhat.array()).colwise().sum().transpose().matrix();
          if (ib->requires_grad) ib->grad_buffer() += go.colwise().sum().transpose();
        });
  }

  if (n < 2) throw Error(ErrorCode::BatchTooSmall, "batchnorm in train mode needs at least 2 rows");
  const Vector<T> mean = xm.colwise().mean().transpose();
  const RowMatrix<T> centered = xm.rowwise() - mean.transpose();
  const Vector<T> var = centered.array().square().colwise().mean().transpose();
  const Vector<T> inv_std = (var.array() + state.epsilon).rsqrt().matrix();
  RowMatrix<T> xhat = centered.array().rowwise() * inv_std.transpose().array();
  o = (xhat.array().rowwise() * gamma.values().transpose().array()).rowwise() +
      beta.values().transpose().array();

  state.running_mean = state.momentum * state.running_mean + (T(1) - state.momentum) * mean;
  state.running_var = state.momentum * state.running_var + (T(1) - state.momentum) * var;

  return detail::make_result<T>(
      Shape{n, d}, std::move(out), {x, gamma, beta}, "batchnorm_train",
      [=, xhat = std::move(xhat)](const Vector<T>&, const Vector<T>& g) {
        ConstMatrixMap<T> go(g.data(), n, d);
        if (ix->requires_grad) {
          // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
          const RowMatrix<T> dxhat = go.array().rowwise() * ig->values.transpose().array();
          const Vector<T> sum_dxhat = dxhat.colwise().sum().transpose();
          const Vector<T> sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum().transpose();
          RowMatrix<T> dx = (dxhat * T(n)).rowwise() - sum_dxhat.transpose();
          dx.array() -= xhat.array().rowwise() * sum_dxhat_xhat.transpose().array();
          dx.array().rowwise() *= (inv_std / T(n)).transpose().array();
          MatrixMap<T>(ix->grad_buffer().data(), n, d) += dx;
        }
        if (ig->requires_grad) ig->grad_buffer() += (go.array() * xhat.array()).colwise().sum().transpose().matrix();
        if (ib->requires_grad) ib->grad_buffer() += go.colwise().sum().transpose();
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw Error(ErrorCode::InvalidConfig, "dropout rate must be in [0, 1)");
  if (mode == Mode::Eval || rate == 0.0) return x;
  const T keep_scale = T(1.0 / (1.0 - rate));
  Vector<T> mask(x.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
  ImplPtr<T> ix = x.impl();
  Vector<T> out = x.values().cwiseProduct(mask);
  return detail::make_result<T>(x.shape(), std::move(out), {x}, "dropout",
                                [ix, mask = std::move(mask)](const Vector<T>&, const Vector<T>& g) {
                                  ix->grad_buffer() += g.cwiseProduct(mask);
                                });
}

template <typename T>
Tensor<T> concat_flatten(std::span<const Tensor<T>> parts) {
  if (parts.empty()) shape_error("concat_flatten", "needs at least one part");
  const Index batch = parts[0].rank() == 3 ? 1 : parts[0].dim(0);
  std::vector<Index> widths, offsets;
  Index total = 0;
  for (const auto& p : parts) {
    const Index nb = p.rank() == 3 ? 1 : p.dim(0);
    if (nb != batch) shape_error("concat_flatten", "parts disagree on batch size");
    offsets.push_back(total);
    widths.push_back(p.size() / batch);
    total += p.size() / batch;
  }
  Vector<T> out(batch * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (Index n = 0; n < batch; ++n) {
      out.segment(n * total + offsets[k], widths[k]) = segment(parts[k].values(), n * widths[k], widths[k]);
    }
  }
  std::vector<ImplPtr<T>> impls;
  for (const auto& p : parts) impls.push_back(p.impl());
  return detail::make_result<T>(
      Shape{batch, total}, std::move(out), std::vector<Tensor<T>>(parts.begin(), parts.end()), "concat_flatten",
      [=](const Vector<T>&, const Vector<T>& g) {
        for (std::size_t k = 0; k < impls.size(); ++k) {
          if (!impls[k]->requires_grad) continue;
          Vector<T>& gk = impls[k]->grad_buffer();
          for (Index n = 0; n < batch; ++n) {
            gk.segment(n * widths[k], widths[k]) += segment(g, n * total + offsets[k], widths[k]);
          }
        }
      });
}

template <typename T>
RowMatrix<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) shape_error("softmax", "expected [n x k] logits");
  ConstMatrixMap<T> z(logits.values().data(), logits.dim(0), logits.dim(1));
  RowMatrix<T> p = (z.colwise() - z.rowwise().maxCoeff()).array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) shape_error("softmax_cross_entropy", "expected [n x k] logits");
  const Index n = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) shape_error("softmax_cross_entropy", "one label per row required");
  for (int y : labels) {
    if (y < 0 || y >= k) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y));
  }
  ConstMatrixMap<T> z(logits.values().data(), n, k);
  T loss = 0;
  for (Index i = 0; i < n; ++i) {
    const T m = z.row(i).maxCoeff();
    const T lse = m + std::log((z.row(i).array() - m).exp().sum());
    loss += lse - z(i, labels[static_cast<std::size_t>(i)]);
  }
  Vector<T> v(1);
  v[0] = loss / T(n);
  ImplPtr<T> il = logits.impl();
  std::vector<int> ys(labels.begin(), labels.end());
  RowMatrix<T> probs = softmax_rows(logits);
  return detail::make_result<T>(Shape{}, std::move(v), {logits}, "softmax_cross_entropy",
                                [il, ys, probs = std::move(probs), n, k](const Vector<T>&, const Vector<T>& g) {
                                  RowMatrix<T> d = probs;
                                  for (Index i = 0; i < n; ++i) d(i, ys[static_cast<std::size_t>(i)]) -= T(1);
                                  MatrixMap<T>(il->grad_buffer().data(), n, k) += d * (g[0] / T(n));
                                });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) {
    shape_error("mse_loss", shape_string(prediction.shape()) + " vs " + shape_string(target.shape()));
  }
  const T count = T(prediction.size());
  Vector<T> diff = prediction.values() - target.values();
  Vector<T> v(1);
  v[0] = diff.squaredNorm() / count;
  ImplPtr<T> ip = prediction.impl();
  return detail::make_result<T>(Shape{}, std::move(v), {prediction}, "mse_loss",
                                [ip, diff = std::move(diff), count](const Vector<T>&, const Vector<T>& g) {
                                  ip->grad_buffer() += diff * (T(2) * g[0] / count);
                                });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw Error(ErrorCode::NotScalar, "backward needs a scalar loss");
  }
  const ImplPtr<T>& root = loss.impl();
  if (root->consumed) throw Error(ErrorCode::AlreadyConsumed, "backward already ran on this loss");

  std::vector<detail::TensorImpl<T>*> order;
  std::unordered_set<detail::TensorImpl<T>*> seen;
  std::vector<detail::TensorImpl<T>*> stack{root.get()};
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    if (!node->record) continue;
    order.push_back(node);
    for (const auto& in : node->record->inputs) {
      if (in->record && !seen.count(in.get())) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const auto* a, const auto* b) { return a->record->sequence > b->record->sequence; });

  if (root->requires_grad || root->record) root->grad_buffer().array() += T(1);
  for (auto* node : order) {
    if (node->grad.size() == 0) continue;
    node->record->backward(node->values, node->grad);
    node->grad.resize(0);  // intermediate gradients are not retained
  }
  root->consumed = true;
}

template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params, double step) {
  for (auto& p : params) p.zero_grad();
  const Tensor<T> loss = f();
  backward(loss);
  const double f0 = static_cast<double>(loss.item());

  GradCheckResult result;
  for (auto& p : params) {
    const Vector<T> analytic = p.grad();
    Vector<T>& values = p.mutable_values();
    for (Index i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + T(step);
      const double f_plus = static_cast<double>(f().item());
      values[i] = saved - T(step);
      const double f_minus = static_cast<double>(f().item());
      values[i] = saved;

      const double forward = (f_plus - f0) / step;
      const double backward_slope = (f0 - f_minus) / step;
      if (std::abs(forward - backward_slope) >
          1e-2 * std::max(std::abs(forward), std::abs(backward_slope)) + 1e-6) {
        ++result.kinks;
        continue;
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = static_cast<double>(analytic[i]);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_relative_error = std::max(result.max_relative_error, rel);
      ++result.checked;
    }
  }
  return result;
}

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(ErrorCode::FormatError, "truncated SERC checkpoint");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() {
    const auto* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

template <typename T>
std::string encode_checkpoint(const NamedTensors<T>& tensors) {
  std::string out = "SERC";
  out.push_back(1);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.rank()));
    for (Index d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) {
      const auto v = static_cast<float>(t.values()[i]);
      std::uint32_t raw;
      std::memcpy(&raw, &v, sizeof raw);
      put_u32(out, raw);
    }
  }
  return out;
}

std::map<std::string, CheckpointRecord> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4), "SERC", 4) != 0) throw Error(ErrorCode::FormatError, "not a SERC checkpoint");
  const auto version = r.u8();
  if (version != 1) throw Error(ErrorCode::FormatError, "unsupported SERC version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::map<std::string, CheckpointRecord> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t len = r.u16();
    const auto* name = r.take(len);
    CheckpointRecord rec;
    const std::uint8_t rank = r.u8();
    for (std::uint8_t i = 0; i < rank; ++i) rec.shape.push_back(static_cast<Index>(r.u32()));
    rec.values.resize(static_cast<std::size_t>(shape_size(rec.shape)));
    for (auto& v : rec.values) {
      const std::uint32_t raw = r.u32();
      std::memcpy(&v, &raw, sizeof v);
    }
    out.emplace(std::string(reinterpret_cast<const char*>(name), len), std::move(rec));
  }
  if (!r.done()) throw Error(ErrorCode::FormatError, "trailing bytes in SERC checkpoint");
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<T>& tensors) {
  const std::string bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::map<std::string, CheckpointRecord> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileNotFound, path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

#define SER_AG_INSTANTIATE(T)                                                                         \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, T);                                                     \
  template Tensor<T> sum(const Tensor<T>&);                                                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                               \
  template Tensor<T> conv2d_valid(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> maxpool2d(const Tensor<T>&, Index, Index);                                      \
  template Tensor<T> relu(const Tensor<T>&);                                                         \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                      \
  template Tensor<T> activation(Activation, const Tensor<T>&);                                       \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> batchnorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                 \
                               BatchNormState<T>&, Mode);                                            \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, Rng&);                                  \
  template Tensor<T> concat_flatten(std::span<const Tensor<T>>);                                     \
  template RowMatrix<T> softmax_rows(const Tensor<T>&);                                              \
  template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);                  \
  template Tensor<T> mse_loss(const Tensor<T>&, const Tensor<T>&);                                   \
  template void backward(const Tensor<T>&);                                                          \
  template GradCheckResult grad_check(const std::function<Tensor<T>()>&, std::span<Tensor<T>>, double); \
  template std::string encode_checkpoint(const NamedTensors<T>&);                                    \
  template void save_checkpoint(const std::filesystem::path&, const NamedTensors<T>&);

SER_AG_INSTANTIATE(float)
SER_AG_INSTANTIATE(double)

#undef SER_AG_INSTANTIATE

}  // namespace ser::ag
