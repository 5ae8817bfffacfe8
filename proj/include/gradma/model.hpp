#ifndef GRADMA_MODEL_HPP
#define GRADMA_MODEL_HPP

// Fully connected ReLU classifiers with softmax cross-entropy.
//
// Parameter layout, per layer in order: the out x in weight matrix row-major,
// then the out-dimensional bias. No hidden layers gives multinomial logistic
// regression.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gradma/data.hpp"
#include "gradma/rng.hpp"
#include "gradma/types.hpp"

namespace gradma::model {

enum class Activation { relu };

struct Architecture {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int num_classes = 0;
  Activation activation = Activation::relu;

  int num_layers() const { return static_cast<int>(hidden_dims.size()) + 1; }
  int layer_in(int l) const { return l == 0 ? input_dim : hidden_dims[static_cast<std::size_t>(l - 1)]; }
  int layer_out(int l) const { return l + 1 == num_layers() ? num_classes : hidden_dims[static_cast<std::size_t>(l)]; }

  void validate() const {
    if (input_dim < 1 || num_classes < 1) throw StructuralError("architecture: dimensions must be >= 1");
    for (int h : hidden_dims)
      if (h < 1) throw StructuralError("architecture: hidden widths must be >= 1");
  }

  bool operator==(const Architecture&) const = default;
};

struct LayerSlot {
  Eigen::Index weight_offset;
  Eigen::Index bias_offset;
  int in;
  int out;
};

inline std::vector<LayerSlot> layout(const Architecture& arch) {
  std::vector<LayerSlot> slots;
  Eigen::Index off = 0;
  for (int l = 0; l < arch.num_layers(); ++l) {
    const int in = arch.layer_in(l);
    const int out = arch.layer_out(l);
    slots.push_back({off, off + Eigen::Index(in) * out, in, out});
    off += Eigen::Index(in) * out + out;
  }
  return slots;
}

inline Eigen::Index param_count(const Architecture& arch) {
  const auto slots = layout(arch);
  const auto& last = slots.back();
  return last.bias_offset + last.out;
}

// Glorot-uniform weights, zero biases.
template <typename Scalar = real>
Vector<Scalar> init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Vector<Scalar> params = Vector<Scalar>::Zero(param_count(arch));
  auto rng = make_rng(seed, Stream::init);
  for (const auto& s : layout(arch)) {
    const double bound = std::sqrt(6.0 / (s.in + s.out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < Eigen::Index(s.in) * s.out; ++i)
      params(s.weight_offset + i) = static_cast<Scalar>(dist(rng));
  }
  return params;
}

template <typename Scalar>
struct LossGrad {
  Scalar loss = 0;
  Vector<Scalar> grad;
};

namespace detail {

template <typename Scalar>
using WeightMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
using BiasMap = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>;

// Returns the outputs of every layer; the last entry holds the logits.
template <typename Scalar, typename DerivedX>
std::vector<RowMatrix<Scalar>> forward(const Architecture& arch, const Vector<Scalar>& params,
                                       const Eigen::MatrixBase<DerivedX>& X) {
  const auto slots = layout(arch);
  std::vector<RowMatrix<Scalar>> outs(slots.size());
  for (std::size_t l = 0; l < slots.size(); ++l) {
    const auto& s = slots[l];
    WeightMap<Scalar> W(params.data() + s.weight_offset, s.out, s.in);
    BiasMap<Scalar> b(params.data() + s.bias_offset, s.out);
    if (l == 0)
      outs[l].noalias() = X.template cast<Scalar>() * W.transpose();
    else
      outs[l].noalias() = outs[l - 1] * W.transpose();
    outs[l].rowwise() += b;
    if (l + 1 < slots.size()) outs[l] = outs[l].cwiseMax(Scalar(0));
  }
  return outs;
}

// Per-row log-sum-exp with max subtraction.
template <typename Scalar>
Vector<Scalar> log_sum_exp(const RowMatrix<Scalar>& logits) {
  const Vector<Scalar> mx = logits.rowwise().maxCoeff();
  return mx + (logits.colwise() - mx).array().exp().rowwise().sum().log().matrix();
}

}  // namespace detail

// Mean softmax cross-entropy over the rows of X and its exact gradient.
template <typename Scalar, typename DerivedX>
LossGrad<Scalar> loss_and_grad(const Architecture& arch, const Vector<Scalar>& params,
                               const Eigen::MatrixBase<DerivedX>& X, std::span<const data::Label> labels) {
  const Eigen::Index n = X.rows();
  if (n < 1 || static_cast<std::size_t>(n) != labels.size()) throw StructuralError("loss_and_grad: bad batch shape");
  if (X.cols() != arch.input_dim) throw StructuralError("loss_and_grad: feature width != input_dim");
  if (params.size() != param_count(arch)) throw StructuralError("loss_and_grad: parameter count mismatch");

  const auto slots = layout(arch);
  auto outs = detail::forward(arch, params, X);
  const RowMatrix<Scalar>& logits = outs.back();
  const Vector<Scalar> lse = detail::log_sum_exp(logits);

  LossGrad<Scalar> out;
  Scalar total = 0;
  for (Eigen::Index r = 0; r < n; ++r) total += lse(r) - logits(r, labels[static_cast<std::size_t>(r)]);
  out.loss = total / Scalar(n);
  if (!std::isfinite(static_cast<double>(out.loss))) throw NumericError("loss_and_grad: non-finite loss");

  // dL/dlogits = (softmax - onehot) / n
  RowMatrix<Scalar> delta = (logits.colwise() - lse).array().exp();
  for (Eigen::Index r = 0; r < n; ++r) delta(r, labels[static_cast<std::size_t>(r)]) -= Scalar(1);
  delta /= Scalar(n);

  out.grad.resize(params.size());
  for (int l = static_cast<int>(slots.size()) - 1; l >= 0; --l) {
    const auto& s = slots[static_cast<std::size_t>(l)];
    Eigen::Map<RowMatrix<Scalar>> gW(out.grad.data() + s.weight_offset, s.out, s.in);
    Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> gb(out.grad.data() + s.bias_offset, s.out);
    if (l == 0)
      gW.noalias() = delta.transpose() * X.template cast<Scalar>();
    else
      gW.noalias() = delta.transpose() * outs[static_cast<std::size_t>(l - 1)];
    gb = delta.colwise().sum();
    if (l > 0) {
      detail::WeightMap<Scalar> W(params.data() + s.weight_offset, s.out, s.in);
      const auto& below = outs[static_cast<std::size_t>(l - 1)];
      RowMatrix<Scalar> back = delta * W;
      delta = back.cwiseProduct((below.array() > Scalar(0)).template cast<Scalar>().matrix());
    }
  }
  return out;
}

template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const Architecture& arch, const Vector<Scalar>& params, const data::Batch& batch) {
  return loss_and_grad(arch, params, batch.features, batch.labels);
}

inline constexpr data::Index kStreamChunk = 512;

// Gradient of the mean loss over the given rows, accumulated chunk by chunk.
template <typename Scalar>
LossGrad<Scalar> full_grad(const Architecture& arch, const Vector<Scalar>& params, const data::Dataset& ds,
                           std::span<const data::Index> rows, data::Index chunk = kStreamChunk) {
  if (rows.empty()) throw StructuralError("full_grad: empty dataset");
  LossGrad<Scalar> acc;
  acc.grad = Vector<Scalar>::Zero(params.size());
  for (data::Index begin = 0; begin < rows.size(); begin += chunk) {
    const auto part = rows.subspan(begin, std::min(chunk, rows.size() - begin));
    const auto batch = data::gather(ds, part);
    const auto lg = loss_and_grad(arch, params, batch);
    const Scalar w = Scalar(part.size());
    acc.loss += w * lg.loss;
    acc.grad.noalias() += w * lg.grad;
  }
  const Scalar n = Scalar(rows.size());
  acc.loss /= n;
  acc.grad /= n;
  return acc;
}

template <typename Scalar>
LossGrad<Scalar> full_grad(const Architecture& arch, const Vector<Scalar>& params, const data::Dataset& ds) {
  std::vector<data::Index> rows(ds.size());
  std::iota(rows.begin(), rows.end(), data::Index{0});
  return full_grad(arch, params, ds, rows);
}

struct Evaluation {
  double accuracy = 0;
  double loss = 0;
};

// Ties in the argmax go to the lowest class index.
template <typename Scalar>
Evaluation evaluate(const Architecture& arch, const Vector<Scalar>& params, const data::Dataset& ds,
                    data::Index chunk = 2048) {
  if (ds.size() == 0) throw StructuralError("evaluate: empty dataset");
  double correct = 0;
  double loss = 0;
  for (data::Index begin = 0; begin < ds.size(); begin += chunk) {
    const auto len = static_cast<Eigen::Index>(std::min(chunk, ds.size() - begin));
    const auto X = ds.features.middleRows(static_cast<Eigen::Index>(begin), len);
    const auto outs = detail::forward(arch, params, X);
    const RowMatrix<Scalar>& logits = outs.back();
    const Vector<Scalar> lse = detail::log_sum_exp(logits);
    for (Eigen::Index r = 0; r < len; ++r) {
      const auto label = ds.labels[begin + static_cast<data::Index>(r)];
      Eigen::Index arg = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c)
        if (logits(r, c) > logits(r, arg)) arg = c;
      if (arg == label) correct += 1;
      loss += static_cast<double>(lse(r) - logits(r, label));
    }
  }
  return {correct / double(ds.size()), loss / double(ds.size())};
}

}  // namespace gradma::model

#endif  // GRADMA_MODEL_HPP
