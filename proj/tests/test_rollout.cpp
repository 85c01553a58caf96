#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "a2t/errors.hpp"
#include "a2t/rollout.hpp"
#include "support/oracles.hpp"

using namespace a2t;

namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.begin()->size()));
  int r = 0;
  for (const auto& row : rows) {
    int c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

void expect_near(const Matrix& a, const Matrix& b, double tol = 1e-12) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) EXPECT_NEAR(a(r, c), b(r, c), tol) << "at " << r << "," << c;
}

SaliencyMap map1(std::vector<double> v) {
  SaliencyMap s;
  s.rows = 1;
  s.cols = static_cast<int>(v.size());
  s.values = std::move(v);
  s.normalized = true;
  return s;
}

}  // namespace

TEST(HeadReduce, ElementwiseMaximum) {
  const HeadTensor h{mat({{0.1, 0.9}, {0.6, 0.4}}), mat({{0.3, 0.7}, {0.2, 0.8}})};
  expect_near(head_reduce(h), mat({{0.3, 0.9}, {0.6, 0.8}}));
}

TEST(HeadReduce, SingleHeadUnchanged) {
  const Matrix a = mat({{0.2, 0.8}, {1.0, 0.0}});
  expect_near(head_reduce({a}), a, 0.0);
}

TEST(HeadReduce, EmptyThrows) { EXPECT_THROW(head_reduce({}), InvalidInput); }

TEST(HeadReduce, MatchesBruteForceAndIgnoresHeadOrder) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    HeadTensor h;
    for (int i = 0; i < 4; ++i) h.push_back(oracle::stochastic(rng, 3, 3));
    const Matrix got = head_reduce(h);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double m = h[0](r, c);
        for (const Matrix& x : h) m = std::max(m, x(r, c));
        EXPECT_EQ(got(r, c), m);
      }
    std::shuffle(h.begin(), h.end(), rng);
    EXPECT_EQ(head_reduce(h), got);
  }
}

TEST(StepSelf, IdentityAttentionKeepsIdentity) {
  const Matrix I = Matrix::Identity(2, 2);
  const RolloutState s = step_self(RolloutState::initial(2, 3), &I, nullptr);
  expect_near(s.qq, I);
}

TEST(StepSelf, UniformAttentionHandExample) {
  const Matrix a = mat({{0.5, 0.5}, {0.5, 0.5}});
  const RolloutState before = RolloutState::initial(2, 3);
  const RolloutState s = step_self(before, &a, nullptr);
  expect_near(s.qq, mat({{0.75, 0.25}, {0.25, 0.75}}));
  EXPECT_EQ(s.ii, before.ii);
  EXPECT_EQ(s.qi, before.qi);
}

TEST(StepSelf, RandomMatchesOracleAndRowsSumToOne) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    RolloutState s = RolloutState::initial(2, 4);
    s.ii = oracle::stochastic(rng, 4, 4);
    const Matrix a = oracle::stochastic(rng, 4, 4);
    const RolloutState out = step_self(s, nullptr, &a);
    EXPECT_LT(oracle::max_abs_diff(oracle::self_update(oracle::from(s.ii), oracle::from(a)), out.ii), 1e-12);
    for (int r = 0; r < 4; ++r) EXPECT_NEAR(out.ii.row(r).sum(), 1.0, 1e-9);
  }
}

TEST(StepSelf, ZeroRowStaysZero) {
  RolloutState s = RolloutState::initial(2, 2);
  s.qq.row(1).setZero();
  const Matrix a = mat({{0.5, 0.5}, {0.0, 1.0}});
  // row 1 of A·R is [0, 0] since R's row 1 is zero and A routes row 1 only to it
  const RolloutState out = step_self(s, &a, nullptr);
  EXPECT_EQ(out.qq.row(1).sum(), 0.0);
}

TEST(StepSelf, DimensionMismatchThrows) {
  const Matrix a = Matrix::Identity(3, 3);
  EXPECT_THROW(step_self(RolloutState::initial(2, 2), &a, nullptr), InvalidInput);
}

TEST(StepMixed, ZeroFixpoint) {
  const Matrix a = mat({{0.3, 0.7}, {0.5, 0.5}});
  EXPECT_TRUE(step_mixed(RolloutState::initial(2, 3), a).qi.isZero(0.0));
}

TEST(StepMixed, IdentityDoubles) {
  RolloutState s = RolloutState::initial(2, 3);
  s.qi = mat({{0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}});
  expect_near(step_mixed(s, Matrix::Identity(2, 2)).qi, 2.0 * s.qi);
}

TEST(StepMixed, RandomMatchesFormula) {
  std::mt19937_64 rng(9);
  RolloutState s = RolloutState::initial(3, 4);
  s.qi = oracle::stochastic(rng, 3, 4);
  const Matrix a = oracle::stochastic(rng, 3, 3);
  const oracle::Grid want = oracle::add(oracle::from(s.qi), oracle::mul(oracle::from(a), oracle::from(s.qi)));
  EXPECT_LT(oracle::max_abs_diff(want, step_mixed(s, a).qi), 1e-12);
  EXPECT_THROW(step_mixed(s, Matrix::Identity(4, 4)), InvalidInput);
}

TEST(StepCross, IdentityContextualization) {
  const Matrix x = mat({{0.2, 0.3, 0.5}, {0.6, 0.4, 0.0}});
  RolloutState s = RolloutState::initial(2, 3);
  expect_near(step_cross(s, x).qi, x);
  s.qi = mat({{1, 2, 3}, {4, 5, 6}});
  expect_near(step_cross(s, x).qi, s.qi + x);
}

TEST(StepCross, RandomMatchesFormula) {
  std::mt19937_64 rng(13);
  RolloutState s = RolloutState::initial(2, 3);
  s.qq = oracle::stochastic(rng, 2, 2);
  s.ii = oracle::stochastic(rng, 3, 3);
  s.qi = oracle::stochastic(rng, 2, 3);
  const Matrix a = oracle::stochastic(rng, 2, 3);
  const oracle::Grid want = oracle::add(
      oracle::from(s.qi),
      oracle::mul(oracle::mul(oracle::transpose(oracle::from(s.qq)), oracle::from(a)), oracle::from(s.ii)));
  EXPECT_LT(oracle::max_abs_diff(want, step_cross(s, a).qi), 1e-12);
  EXPECT_THROW(step_cross(s, Matrix::Identity(3, 3)), InvalidInput);
}

TEST(Rollout, EmptyStackIsInitialState) {
  AttentionStack st;
  st.q_len = 2;
  st.i_len = 3;
  st.patch_grid = {1, 3};
  const RolloutState s = rollout(st);
  EXPECT_EQ(s.qq, Matrix::Identity(2, 2));
  EXPECT_EQ(s.ii, Matrix::Identity(3, 3));
  EXPECT_TRUE(s.qi.isZero(0.0));
}

TEST(Rollout, IdentityLayersNeverMix) {
  AttentionStack st;
  st.q_len = 2;
  st.i_len = 3;
  st.patch_grid = {1, 3};
  st.layers.push_back({LayerKind::question_self, 1, HeadTensor{Matrix::Identity(2, 2)}, std::nullopt, std::nullopt});
  st.layers.push_back({LayerKind::image_self, 1, std::nullopt, HeadTensor{Matrix::Identity(3, 3)}, std::nullopt});
  const RolloutState s = rollout(st);
  expect_near(s.qq, Matrix::Identity(2, 2));
  expect_near(s.ii, Matrix::Identity(3, 3));
  EXPECT_TRUE(s.qi.isZero(0.0));
  const SaliencyMap raw = saliency_raw(s, st);
  for (double v : raw.values) EXPECT_EQ(v, 0.0);
}

TEST(Rollout, SingleFusionLayerComposesSteps) {
  AttentionStack st;
  st.q_len = 2;
  st.i_len = 3;
  st.patch_grid = {1, 3};
  const Matrix x = mat({{0.2, 0.3, 0.5}, {0.6, 0.4, 0.0}});
  st.layers.push_back({LayerKind::fusion, 1, HeadTensor{Matrix::Identity(2, 2)}, std::nullopt, HeadTensor{x}});
  expect_near(rollout(st).qi, x);
}

TEST(Rollout, RandomThreeLayerStackMatchesOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    AttentionStack st;
    st.q_len = 3;
    st.i_len = 4;
    st.patch_grid = {2, 2};
    for (LayerKind k : {LayerKind::image_self, LayerKind::question_self, LayerKind::fusion}) {
      LayerAttention l{k, 2, std::nullopt, std::nullopt, std::nullopt};
      auto t = [&](int r, int c) { return HeadTensor{oracle::stochastic(rng, r, c), oracle::stochastic(rng, r, c)}; };
      if (k != LayerKind::image_self) l.qq = t(3, 3);
      if (k == LayerKind::image_self) l.ii = t(4, 4);
      if (k == LayerKind::fusion) l.qi = t(3, 4);
      st.layers.push_back(std::move(l));
    }
    validate(st);
    const RolloutState got = rollout(st);
    const oracle::State want = oracle::rollout(st);
    EXPECT_LT(oracle::max_abs_diff(want.qq, got.qq), 1e-9);
    EXPECT_LT(oracle::max_abs_diff(want.ii, got.ii), 1e-9);
    EXPECT_LT(oracle::max_abs_diff(want.qi, got.qi), 1e-9);
  }
}

TEST(Rollout, RandomStacksStayNonnegativeAndMatchOracle) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    const AttentionStack st = oracle::random_stack(rng);
    validate(st);
    const RolloutState got = rollout(st);
    const oracle::State want = oracle::rollout(st);
    EXPECT_LT(oracle::max_abs_diff(want.qi, got.qi), 1e-9);
    EXPECT_GE(got.qq.minCoeff(), 0.0);
    EXPECT_GE(got.ii.minCoeff(), 0.0);
    EXPECT_GE(got.qi.minCoeff(), 0.0);
  }
}

TEST(Saliency, HandArithmetic) {
  AttentionStack st;
  st.q_len = 2;
  st.i_len = 3;
  st.patch_grid = {1, 3};
  RolloutState s = RolloutState::initial(2, 3);
  s.qi = mat({{0.2, 0.1, 0.0}, {0.4, 0.1, 0.0}});
  const SaliencyMap raw = saliency_raw(s, st);
  EXPECT_NEAR(raw.values[0], 0.3, 1e-15);
  EXPECT_NEAR(raw.values[1], 0.1, 1e-15);
  EXPECT_EQ(raw.values[2], 0.0);
  const SaliencyMap n = saliency(s, st);
  EXPECT_TRUE(n.normalized);
  EXPECT_NEAR(n.values[0], 1.0, 1e-15);
  EXPECT_NEAR(n.values[1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(n.values[2], 0.0);
}

TEST(Saliency, ConstantMapNormalizesToZero) {
  AttentionStack st;
  st.q_len = 2;
  st.i_len = 4;
  st.patch_grid = {2, 2};
  RolloutState s = RolloutState::initial(2, 4);
  s.qi.setConstant(0.25);
  for (double v : saliency(s, st).values) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, DominantColumnIsOneAndClsDropped) {
  AttentionStack st;
  st.q_len = 1;
  st.i_len = 4;
  st.cls_offset = 1;
  st.patch_grid = {1, 3};
  RolloutState s = RolloutState::initial(1, 4);
  s.qi = mat({{5.0, 0.1, 0.9, 0.2}});  // cls column is the largest but ignored
  const SaliencyMap n = saliency(s, st);
  ASSERT_EQ(n.values.size(), 3u);
  EXPECT_EQ(n.values[1], 1.0);
  EXPECT_EQ(n.values[0], 0.0);
}

TEST(ThresholdMask, DefaultTauExample) {
  EXPECT_EQ(patch_mask(map1({1.0, 0.5, 0.0}), 200.0 / 256.0), (std::vector<std::uint8_t>{1, 0, 0}));
}

TEST(ThresholdMask, TauZeroKeepsPositive) {
  EXPECT_EQ(patch_mask(map1({0.0, 0.2, 1.0, 0.0, 1e-9}), 0.0), (std::vector<std::uint8_t>{0, 1, 1, 0, 1}));
}

TEST(ThresholdMask, FallbackKeepsFirstArgmax) {
  EXPECT_EQ(patch_mask(map1({0.0, 0.0, 0.0}), 0.5), (std::vector<std::uint8_t>{1, 0, 0}));
  EXPECT_EQ(patch_mask(map1({0.1, 0.4, 0.4}), 0.5), (std::vector<std::uint8_t>{0, 1, 0}));
}

TEST(ThresholdMask, TauOutOfRangeThrows) {
  EXPECT_THROW(threshold_mask(map1({1.0}), -0.1, 4, 4), InvalidInput);
  EXPECT_THROW(threshold_mask(map1({1.0}), 1.5, 4, 4), InvalidInput);
}

TEST(ThresholdMask, NearestNeighbourBlocksWithRemainder) {
  SaliencyMap s;
  s.rows = 2;
  s.cols = 3;
  s.values = {1, 0, 0, 0, 0, 1};
  s.normalized = true;
  const BinaryMask m = threshold_mask(s, 0.5, 7, 5);  // 7/3 = 2 px per column, last absorbs 3
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      const int r = block_index(y, 5, 2), c = block_index(x, 7, 3);
      EXPECT_EQ(m.at(x, y), s.at(r, c) > 0.5 ? 1 : 0);
    }
  EXPECT_EQ(block_index(6, 7, 3), 2);
  EXPECT_EQ(block_index(4, 5, 2), 1);
  EXPECT_EQ(m.popcount(), 2u * 2u + 3u * 3u);
}

TEST(ApplyMask, OnesAndZeros) {
  Image img(4, 2);
  std::iota(img.pixels.begin(), img.pixels.end(), 1);
  BinaryMask ones{4, 2, std::vector<std::uint8_t>(8, 1)};
  BinaryMask zeros{4, 2, std::vector<std::uint8_t>(8, 0)};
  EXPECT_EQ(apply_mask(img, ones), img);
  for (auto p : apply_mask(img, zeros).pixels) EXPECT_EQ(p, 0);
  EXPECT_THROW(apply_mask(img, BinaryMask{2, 2, std::vector<std::uint8_t>(4, 1)}), InvalidInput);
}

TEST(ApplyMask, CheckerboardZeroCountMatchesPopcount) {
  Image img(6, 4);
  std::fill(img.pixels.begin(), img.pixels.end(), 200);
  BinaryMask m{6, 4, {}};
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) m.bits.push_back((x + y) % 2);
  const Image out = apply_mask(img, m);
  std::size_t zeroed = 0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) {
      const bool black = out.at(x, y)[0] == 0 && out.at(x, y)[1] == 0 && out.at(x, y)[2] == 0;
      EXPECT_EQ(black, m.at(x, y) == 0);
      zeroed += black;
    }
  EXPECT_EQ(zeroed, m.bits.size() - m.popcount());
}
