#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gradma/model.hpp"

using namespace gradma;
using model::Architecture;

namespace {

data::Dataset random_dataset(int n, int dim, int classes, std::uint64_t seed) {
  auto rng = make_rng(seed, Stream::qp_fuzz);
  std::normal_distribution<double> normal;
  data::Dataset ds;
  ds.features.resize(n, dim);
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = normal(rng);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ds.labels[static_cast<std::size_t>(i)] = (i * 7 + 3) % classes;
  ds.num_classes = classes;
  return ds;
}

std::vector<data::Index> iota_rows(std::size_t n, std::size_t start = 0) {
  std::vector<data::Index> rows(n);
  std::iota(rows.begin(), rows.end(), start);
  return rows;
}

}  // namespace

TEST(Architecture, LogisticParameterCount) { EXPECT_EQ(model::param_count({784, {}, 10}), 7850); }

TEST(Architecture, MnistParameterCount) {
  EXPECT_EQ(model::param_count({784, {200, 200, 200}, 10}), 784 * 200 + 200 + 2 * (200 * 200 + 200) + 200 * 10 + 10);
}

TEST(Architecture, RejectsZeroWidths) {
  EXPECT_THROW((Architecture{0, {}, 10}.validate()), StructuralError);
  EXPECT_THROW((Architecture{4, {3, 0}, 2}.validate()), StructuralError);
}

TEST(InitParams, DeterministicWithZeroBiases) {
  const Architecture arch{12, {7, 5}, 3};
  const auto a = model::init_params(arch, 42);
  EXPECT_EQ(a, model::init_params(arch, 42));
  EXPECT_NE(a, model::init_params(arch, 43));
  for (const auto& s : model::layout(arch)) {
    EXPECT_TRUE(a.segment(s.bias_offset, s.out).isZero(0));
    const double bound = std::sqrt(6.0 / (s.in + s.out));
    EXPECT_LE(a.segment(s.weight_offset, Eigen::Index(s.in) * s.out).cwiseAbs().maxCoeff(), bound);
  }
}

TEST(LossAndGrad, ZeroLogisticIsLogClasses) {
  const Architecture arch{6, {}, 10};
  const auto ds = random_dataset(9, 6, 10, 1);
  const auto lg = model::loss_and_grad(arch, ParamVec::Zero(model::param_count(arch)).eval(),
                                       ds.features, std::span<const data::Label>(ds.labels));
  EXPECT_NEAR(lg.loss, std::log(10.0), 1e-14);
}

TEST(LossAndGrad, DuplicatedBatchIsIdentical) {
  const Architecture arch{5, {4}, 3};
  const auto ds = random_dataset(6, 5, 3, 2);
  RowMatrix<real> X2(12, 5);
  X2 << ds.features, ds.features;
  std::vector<data::Label> y2 = ds.labels;
  y2.insert(y2.end(), ds.labels.begin(), ds.labels.end());
  const auto params = model::init_params(arch, 3);
  const auto a = model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels));
  const auto b = model::loss_and_grad(arch, params, X2, std::span<const data::Label>(y2));
  EXPECT_NEAR(a.loss, b.loss, 1e-15);
  EXPECT_LE((a.grad - b.grad).cwiseAbs().maxCoeff(), 1e-15);
}

// Every coordinate of a small network against central differences in extended precision.
TEST(LossAndGrad, MatchesFiniteDifferencesEverywhere) {
  using LD = long double;
  for (const Architecture& arch : {Architecture{4, {}, 3}, Architecture{4, {6, 5}, 3}}) {
    const auto ds = random_dataset(5, 4, 3, 4);
    ParamVec params = model::init_params(arch, 5);
    params.array() += 0.05;
    const auto g = model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels)).grad;
    const RowMatrix<LD> X = ds.features.cast<LD>();
    const LD h = 1e-5L;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      Vector<LD> plus = params.cast<LD>(), minus = params.cast<LD>();
      plus(i) += h;
      minus(i) -= h;
      const LD fd = (model::loss_and_grad(arch, plus, X, std::span<const data::Label>(ds.labels)).loss -
                     model::loss_and_grad(arch, minus, X, std::span<const data::Label>(ds.labels)).loss) /
                    (2 * h);
      const double denom = std::max({std::abs(g(i)), std::abs(double(fd)), 1e-12});
      EXPECT_LE(std::abs(g(i) - double(fd)) / denom, 1e-5) << "coordinate " << i;
    }
  }
}

TEST(LossAndGrad, ShapeErrors) {
  const Architecture arch{4, {}, 3};
  const auto ds = random_dataset(5, 4, 3, 4);
  const ParamVec params = ParamVec::Zero(model::param_count(arch));
  std::vector<data::Label> short_labels(3, 0);
  EXPECT_THROW(model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(short_labels)),
               StructuralError);
  EXPECT_THROW(model::loss_and_grad(arch, ParamVec(ParamVec::Zero(7)), ds.features,
                                    std::span<const data::Label>(ds.labels)),
               StructuralError);
}

TEST(LossAndGrad, NonFiniteIsNumericError) {
  const Architecture arch{4, {}, 3};
  auto ds = random_dataset(5, 4, 3, 4);
  ds.features(0, 0) = std::numeric_limits<double>::infinity();
  const ParamVec params = ParamVec::Ones(model::param_count(arch));
  EXPECT_THROW(model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels)), NumericError);
}

TEST(FullGrad, SingleBatchAndHalvesAgree) {
  const Architecture arch{5, {8}, 4};
  const auto ds = random_dataset(37, 5, 4, 6);
  const auto params = model::init_params(arch, 7);
  const auto whole = model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels));
  const auto streamed = model::full_grad(arch, params, ds, iota_rows(37), 5);
  EXPECT_NEAR(streamed.loss, whole.loss, 1e-12);
  EXPECT_LE((streamed.grad - whole.grad).cwiseAbs().maxCoeff(), 1e-12);

  const auto first = model::full_grad(arch, params, ds, iota_rows(20));
  const auto second = model::full_grad(arch, params, ds, iota_rows(17, 20));
  const ParamVec mixed = (20.0 * first.grad + 17.0 * second.grad) / 37.0;
  EXPECT_LE((mixed - whole.grad).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(FullGrad, EmptyIsStructural) {
  const Architecture arch{5, {}, 4};
  const auto ds = random_dataset(3, 5, 4, 6);
  EXPECT_THROW(model::full_grad(arch, ParamVec(ParamVec::Zero(24)), ds, std::vector<data::Index>{}), StructuralError);
}

TEST(Evaluate, ZeroModelTiesGoToClassZero) {
  // Balanced 10-class set: the all-zero model predicts class 0 everywhere.
  const Architecture arch{3, {}, 10};
  data::Dataset ds;
  ds.num_classes = 10;
  ds.features = RowMatrix<real>::Ones(50, 3);
  for (int i = 0; i < 50; ++i) ds.labels.push_back(i % 10);
  const auto ev = model::evaluate(arch, ParamVec(ParamVec::Zero(model::param_count(arch))), ds);
  EXPECT_DOUBLE_EQ(ev.accuracy, 0.1);
  EXPECT_NEAR(ev.loss, std::log(10.0), 1e-14);
}

TEST(Evaluate, ConstantArgmaxLabelsGiveFullAccuracy) {
  const Architecture arch{3, {}, 4};
  ParamVec params = ParamVec::Zero(model::param_count(arch));
  params(model::layout(arch)[0].bias_offset + 2) = 1.0;  // class 2 always wins
  data::Dataset ds;
  ds.num_classes = 4;
  ds.features = RowMatrix<real>::Random(20, 3);
  ds.labels.assign(20, 2);
  EXPECT_EQ(model::evaluate(arch, params, ds).accuracy, 1.0);
}

TEST(Evaluate, LossMatchesTrainingLoss) {
  const Architecture arch{5, {6}, 3};
  const auto ds = random_dataset(4100, 5, 3, 9);
  const auto params = model::init_params(arch, 1);
  const auto lg = model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels));
  EXPECT_NEAR(model::evaluate(arch, params, ds).loss, lg.loss, 1e-12);
}

TEST(LossAndGrad, BitIdenticalRepeats) {
  const Architecture arch{5, {6}, 3};
  const auto ds = random_dataset(10, 5, 3, 9);
  const auto params = model::init_params(arch, 1);
  const auto a = model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels));
  const auto b = model::loss_and_grad(arch, params, ds.features, std::span<const data::Label>(ds.labels));
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}
