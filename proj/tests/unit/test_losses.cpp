#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "maskdepth/losses.hpp"

namespace maskdepth {
namespace {

Matrix<double> row(std::initializer_list<double> v) {
  Matrix<double> m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

SparseDepth<double> dense(const Matrix<double>& values) {
  return {values, Mask::Constant(values.rows(), values.cols(), true)};
}

Matrix<double> randn(int rows, int cols, Rng& rng, double mean = 0.0, double sd = 1.0) {
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(mean, sd);
  return m;
}

// Central differences, kept separate from the library helper.
Matrix<double> central_diff(const std::function<double()>& f, Matrix<double>& x, double h = 1e-6) {
  Matrix<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel(const Matrix<double>& a, const Matrix<double>& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

TEST(SupervisedL1, PerfectPredictionIsZero) {
  const Matrix<double> d = row({1, 5, 9});
  EXPECT_EQ(supervised_l1(d, dense(d)).value, 0.0);
}

TEST(SupervisedL1, HandCase) { EXPECT_DOUBLE_EQ(supervised_l1(row({1, 3}), dense(row({2, 1}))).value, 1.5); }

TEST(SupervisedL1, SingleValidPixel) {
  SparseDepth<double> gt = dense(row({10, 2, 7}));
  gt.valid << false, true, false;
  EXPECT_DOUBLE_EQ(supervised_l1(row({0, 6, 0}), gt).value, 4.0);
}

TEST(SupervisedL1, NoValidPixelsThrows) {
  SparseDepth<double> gt = dense(row({1, 2}));
  gt.valid.setConstant(false);
  EXPECT_THROW((void)supervised_l1(row({1, 2}), gt), EmptySupervisionError);
}

TEST(SupervisedL1, ShapeMismatchThrows) {
  EXPECT_THROW((void)supervised_l1(row({1, 2}), dense(row({1, 2, 3}))), ShapeError);
}

TEST(UncertaintyNll, UnitResidualZeroLogVariance) {
  EXPECT_DOUBLE_EQ(uncertainty_nll(row({3}), row({0}), dense(row({2}))).value, 1.0);
}

TEST(UncertaintyNll, OptimumAtLogResidual) {
  EXPECT_NEAR(uncertainty_nll(row({3}), row({std::log(2.0)}), dense(row({1}))).value, 1.0 + std::log(2.0), 1e-12);
  EXPECT_NEAR(1.0 + std::log(2.0), 1.6931, 1e-4);
}

TEST(UncertaintyNll, GradientDescentOnLogVarianceConverges) {
  for (double r : {0.1, 1.0, 10.0}) {
    const Matrix<double> pred = row({5.0 + r});
    const SparseDepth<double> gt = dense(row({5.0}));
    Matrix<double> s = row({0.0});
    for (int it = 0; it < 2000; ++it) s -= 0.5 * uncertainty_nll(pred, s, gt).grad_log_u;
    EXPECT_NEAR(s(0, 0), std::log(r), 1e-3) << "r=" << r;
    EXPECT_NEAR(uncertainty_nll(pred, s, gt).value, 1.0 + std::log(r), 1e-6) << "r=" << r;
  }
}

TEST(DepthConsistency, IdenticalBranchesGiveZero) {
  Rng rng(1);
  DepthPrediction<double> weak{randn(4, 5, rng, 10.0), randn(4, 5, rng), {}};
  for (auto w : {ConsistencyWeighting::confidence, ConsistencyWeighting::literal, ConsistencyWeighting::none}) {
    EXPECT_EQ(depth_consistency(weak, weak.depth, w).value, 0.0);
  }
}

TEST(DepthConsistency, ZeroLogVarianceIsPlainL1) {
  DepthPrediction<double> weak{row({1, 2, 3, 4}), row({0, 0, 0, 0}), {}};
  const Matrix<double> strong = row({2, 2, 1, 8});
  EXPECT_DOUBLE_EQ(depth_consistency(weak, strong).value, (1 + 0 + 2 + 4) / 4.0);
}

TEST(DepthConsistency, DistrustedPixelContributesNothing) {
  DepthPrediction<double> weak{row({1, 2}), row({0, 800}), {}};
  const Matrix<double> strong = row({1, 50});
  EXPECT_EQ(depth_consistency(weak, strong).value, 0.0);
}

TEST(DepthConsistency, ConfidenceWeightNeverExceedsOne) {
  DepthPrediction<double> weak{row({0, 0}), row({-5, -1}), {}};
  EXPECT_DOUBLE_EQ(depth_consistency(weak, row({1, 1})).value, 1.0);
}

TEST(DepthConsistency, TargetGradientsAreExactlyZero) {
  Rng rng(2);
  DepthPrediction<double> weak{randn(3, 4, rng, 10.0), randn(3, 4, rng), {}};
  const Matrix<double> strong = randn(3, 4, rng, 10.0);
  for (auto w : {ConsistencyWeighting::confidence, ConsistencyWeighting::literal, ConsistencyWeighting::none}) {
    const auto r = depth_consistency(weak, strong, w);
    EXPECT_TRUE((r.grad_target.array() == 0.0).all());
    EXPECT_TRUE((r.grad_target_log_u.array() == 0.0).all());
    EXPECT_FALSE(r.grad_pred.isZero(0));
  }
}

TEST(FeatureConsistency, SquaredDistanceHandCase) {
  const Matrix<double> z_weak = row({0, 0});
  const Matrix<double> pred = row({3, 4});
  EXPECT_DOUBLE_EQ(feature_consistency(z_weak, pred).value, 25.0);
}

TEST(FeatureConsistency, IdentityHeadOnEqualFeatures) {
  PredictorHead<double> head(6);
  Rng rng(3);
  head.init(rng);  // zero output layer: the residual head starts as the identity
  const Matrix<double> z = randn(5, 6, rng);
  EXPECT_EQ(head.forward(z, nullptr), z);
  EXPECT_EQ(feature_consistency(z, z, head).value, 0.0);
}

TEST(FeatureConsistency, WeakGradientIsExactlyZero) {
  Rng rng(4);
  const Matrix<double> a = randn(4, 3, rng);
  const Matrix<double> b = randn(4, 3, rng);
  EXPECT_TRUE((feature_consistency(a, b).grad_target.array() == 0.0).all());
  EXPECT_FALSE(feature_consistency(a, b, false).grad_target.isZero(0));
}

TEST(Gradients, MatchCentralDifferences) {
  Rng rng(5);
  Matrix<double> pred = randn(3, 5, rng, 10.0, 3.0);
  Matrix<double> log_u = randn(3, 5, rng, 0.0, 0.5);
  SparseDepth<double> gt = dense(randn(3, 5, rng, 10.0, 3.0));
  gt.valid(0, 0) = false;
  gt.valid(2, 3) = false;

  auto l1 = supervised_l1(pred, gt);
  EXPECT_LT(rel(l1.grad_pred, central_diff([&] { return supervised_l1(pred, gt).value; }, pred)), 1e-6);

  auto nll = uncertainty_nll(pred, log_u, gt);
  EXPECT_LT(rel(nll.grad_pred, central_diff([&] { return uncertainty_nll(pred, log_u, gt).value; }, pred)), 1e-6);
  EXPECT_LT(rel(nll.grad_log_u, central_diff([&] { return uncertainty_nll(pred, log_u, gt).value; }, log_u)), 1e-6);

  DepthPrediction<double> weak{randn(3, 5, rng, 10.0, 3.0), log_u, {}};
  Matrix<double> strong = randn(3, 5, rng, 10.0, 3.0);
  for (auto w : {ConsistencyWeighting::confidence, ConsistencyWeighting::literal, ConsistencyWeighting::none}) {
    const auto dc = depth_consistency(weak, strong, w);
    const auto numeric = central_diff([&] { return depth_consistency(weak, strong, w).value; }, strong);
    EXPECT_LT(rel(dc.grad_pred, numeric), 1e-6);
  }

  Matrix<double> z_weak = randn(4, 6, rng);
  Matrix<double> z_strong = randn(4, 6, rng);
  PredictorHead<double> head(6);
  head.init(rng);
  head.fc2.init_xavier(rng);
  const auto fc = feature_consistency(z_weak, z_strong, head);
  const auto numeric = central_diff([&] { return feature_consistency(z_weak, head.forward(z_strong, nullptr)).value; },
                                    z_strong);
  EXPECT_LT(rel(fc.grad_pred, numeric), 1e-6);
}

TEST(TotalLoss, ZeroWeightsLeaveSupervisedTerm) {
  LossTerms t;
  t.l_gt = 2.5;
  t.l_dc = 7;
  t.l_uc = 3;
  t.l_fc = 1;
  EXPECT_EQ(total_loss(t, {0, 0, 0, 1, 64}).total, 2.5);
}

TEST(TotalLoss, UnitTermsAndWeightsSumToFour) {
  LossTerms t;
  t.l_gt = 1;
  t.l_dc = 1;
  t.l_uc = 1;
  t.l_fc = 1;
  EXPECT_EQ(total_loss(t, {}).total, 4.0);
}

TEST(TotalLoss, AblationRowsSwitchTermsOn) {
  LossTerms t;
  t.l_gt = 1;
  t.l_dc = 2;
  t.l_uc = 4;
  t.l_fc = 8;
  EXPECT_EQ(total_loss(t, {1, 0, 0, 1, 64}).total, 3.0);
  EXPECT_EQ(total_loss(t, {1, 1, 0, 1, 64}).total, 7.0);
  EXPECT_EQ(total_loss(t, {1, 1, 1, 1, 64}).total, 15.0);
}

TEST(TotalLoss, MissingLabelsDropSupervisedTerms) {
  LossTerms t;
  t.l_dc = 1;
  t.l_fc = 2;
  const auto b = total_loss(t, {});
  EXPECT_EQ(b.l_gt, 0.0);
  EXPECT_EQ(b.l_uc, 0.0);
  EXPECT_EQ(b.total, 3.0);
}

TEST(TotalLoss, NegativeWeightRejected) {
  EXPECT_THROW((void)total_loss(LossTerms{}, {-1, 0, 0, 1, 1}), ConfigError);
}

}  // namespace
}  // namespace maskdepth
