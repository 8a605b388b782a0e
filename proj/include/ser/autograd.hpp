#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ser/error.hpp"
#include "ser/random.hpp"

// Minimal reverse-mode differentiation over dense row-major tensors.
//
// A Tensor is a shared handle. Every op whose inputs require gradients records
// a TapeRecord on its output; backward() gathers the records reachable from a
// scalar loss, orders them by creation sequence (a valid topological order)
// and runs them in reverse.
namespace ser::ag {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

enum class Mode { Train, Eval };
enum class Activation { Relu, Sigmoid };

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
struct TapeRecord {
  std::uint64_t sequence = 0;
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Receives the output's values and its accumulated gradient.
  std::function<void(const Vector<T>& output, const Vector<T>& output_grad)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  Vector<T> values;
  Vector<T> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  bool consumed = false;
  std::shared_ptr<TapeRecord<T>> record;

  Vector<T>& grad_buffer() {
    if (grad.size() != values.size()) grad = Vector<T>::Zero(values.size());
    return grad;
  }
};

std::uint64_t next_sequence();

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  Tensor(Shape shape, Vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (shape_size(shape) != values.size()) {
      throw Error(ErrorCode::ShapeMismatch, "values length " + std::to_string(values.size()) +
                                                " does not match shape " + shape_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return Tensor(std::move(shape), Vector<T>::Zero(n), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const Index n = shape_size(shape);
    return Tensor(std::move(shape), Vector<T>::Constant(n, value), requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  Index size() const { return impl_->values.size(); }

  const Vector<T>& values() const { return impl_->values; }
  /// Direct write access, for optimizers and finite-difference probes.
  Vector<T>& mutable_values() { return impl_->values; }
  T item() const {
    if (size() != 1) throw Error(ErrorCode::NotScalar, "item() on tensor of shape " + shape_string(shape()));
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return impl_->grad.size() == impl_->values.size(); }
  /// Zero-filled when no gradient has been accumulated.
  Vector<T> grad() const { return has_grad() ? impl_->grad : Vector<T>::Zero(size()); }
  Vector<T>& mutable_grad() { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.resize(0); }

  /// Same values, no tape history, no gradient requirement.
  Tensor detach() const { return Tensor(shape(), values(), false); }

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

template <typename T>
using NamedTensors = std::map<std::string, Tensor<T>>;

namespace detail {

/// Builds an op output; records `backward` only when an input requires grad.
template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, Vector<T> values, const std::vector<Tensor<T>>& inputs, const char* op,
                      Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(values), false);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto record = std::make_shared<TapeRecord<T>>();
  record->sequence = next_sequence();
  record->op = op;
  for (const auto& in : inputs) record->inputs.push_back(in.impl());
  record->backward = std::forward<Backward>(backward);
  out.impl()->requires_grad = true;
  out.impl()->record = std::move(record);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations. Convolution and pooling accept [C x H x W] or batched
// [N x C x H x W] inputs; the output keeps the input's rank.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

/// Valid cross-correlation plus per-output-channel bias.
template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias);

/// Non-overlapping max pooling, stride = pool size, remainder dropped.
/// Ties resolve to the first maximum in row-major window order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Index pool_h, Index pool_w);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> activation(Activation kind, const Tensor<T>& x);

/// x [n x d_in] . weight [d_in x d_out] + bias [d_out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
struct BatchNormState {
  Vector<T> running_mean;
  Vector<T> running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(Index features, T momentum_ = T(0.9), T epsilon_ = T(1e-5))
      : running_mean(Vector<T>::Zero(features)),
        running_var(Vector<T>::Ones(features)),
        momentum(momentum_),
        epsilon(epsilon_) {}
};

/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running averages: r = momentum * r + (1 - momentum) * batch.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, Mode mode);

/// Inverted dropout; identity in eval mode or at rate 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng);

/// Row-major flatten and concatenate. Rank-3 parts count as one sample;
/// otherwise the leading dimension is the batch. Output is [N x sum].
template <typename T>
Tensor<T> concat_flatten(std::span<const Tensor<T>> parts);

/// Batch mean of -log softmax(logits)[label].
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Mean squared difference; target gets no gradient.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target);

/// Row-wise softmax of a [n x k] tensor (values only).
template <typename T>
RowMatrix<T> softmax_rows(const Tensor<T>& logits);

/// Reverse-mode accumulation from a scalar. Leaf gradients add up across
/// calls until zero_grad(); a given loss may be back-propagated only once.
template <typename T>
void backward(const Tensor<T>& loss);

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // coordinates skipped as non-differentiable
};

/// Central differences against backward() for every coordinate of `params`.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8). A coordinate whose
/// one-sided slopes disagree by more than 1% (plus 1e-6 absolute) straddles a
/// kink and is skipped.
template <typename T>
GradCheckResult grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> params,
                           double step = 1e-5);

// SERC v1 parameter checkpoints, records ordered by name.
template <typename T>
std::string encode_checkpoint(const NamedTensors<T>& tensors);
struct CheckpointRecord {
  Shape shape;
  std::vector<float> values;
};
std::map<std::string, CheckpointRecord> decode_checkpoint(const std::string& bytes);
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const NamedTensors<T>& tensors);
std::map<std::string, CheckpointRecord> load_checkpoint(const std::filesystem::path& path);

}  // namespace ser::ag
