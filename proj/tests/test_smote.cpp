#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "opseq/smote.hpp"

using namespace opseq;

namespace {

std::vector<FlatSample> random_samples(std::size_t n, Eigen::Index dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<FlatSample> out(n);
  for (auto& s : out) {
    s.features.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) s.features(i) = d(rng);
    s.label = 1;
  }
  return out;
}

// All-pairs distances; the k-th smallest distance bounds the admissible set.
std::vector<double> kth_distance(const std::vector<FlatSample>& xs, std::size_t k) {
  std::vector<double> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (i == j) continue;
      double sq = 0.0;
      for (Eigen::Index c = 0; c < xs[i].features.size(); ++c) {
        const double diff = xs[i].features(c) - xs[j].features(c);
        sq += diff * diff;
      }
      d.push_back(sq);
    }
    std::sort(d.begin(), d.end());
    out.push_back(d[k - 1]);
  }
  return out;
}

}  // namespace

TEST(Flatten, StepMajor) {
  CodeVectorSequence cv;
  cv.steps.resize(2, 2);
  cv.steps << 1, 3, 2, 4;  // columns are steps: [1,2], [3,4]
  cv.mask = {1, 1};
  EXPECT_EQ(flatten(cv), (Eigen::VectorXd(4) << 1, 2, 3, 4).finished());
}

TEST(Flatten, AllPadIsZero) {
  CodeVectorSequence cv;
  cv.steps = Eigen::MatrixXd::Zero(3, 5);
  cv.mask.assign(5, 0);
  EXPECT_TRUE(flatten(cv).isZero(0.0));
}

TEST(Flatten, RoundTrip) {
  std::mt19937_64 rng(4);
  const EmbeddingMatrix e = EmbeddingMatrix::random(4, 10, rng);
  const std::vector<TokenId> tokens{3, 9, 2, 0, 0};
  const CodeVectorSequence cv = embed(tokens, e);
  const CodeVectorSequence back = unflatten(flatten(cv), 4);
  EXPECT_EQ(back.steps, cv.steps);
  EXPECT_EQ(back.mask, cv.mask);
  EXPECT_THROW(unflatten(Eigen::VectorXd::Zero(7), 4), Error);
}

TEST(Smote, TwoPointSegment) {
  std::vector<FlatSample> m(2);
  m[0].features = Eigen::Vector2d(0, 0);
  m[1].features = Eigen::Vector2d(2, 2);
  const SmoteResult r = smote_oversample(m, 3, 1, 0);
  ASSERT_EQ(r.samples.size(), 3u);
  const Eigen::VectorXd& s = r.samples[2].features;
  EXPECT_DOUBLE_EQ(s(0), s(1));
  EXPECT_GE(s(0), 0.0);
  EXPECT_LE(s(0), 2.0);
}

TEST(Smote, TargetEqualsSizeReturnsOriginals) {
  const auto m = random_samples(6, 3, 1);
  const SmoteResult r = smote_oversample(m, 6, 5, 0);
  ASSERT_EQ(r.samples.size(), 6u);
  EXPECT_TRUE(r.origins.empty());
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(r.samples[i].features, m[i].features);
}

TEST(Smote, Errors) {
  const auto one = random_samples(1, 3, 1);
  try {
    smote_oversample(one, 5, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooFewSamples);
  }
  const auto m = random_samples(4, 3, 1);
  EXPECT_THROW(smote_oversample(m, 3, 5, 0), Error);
  EXPECT_THROW(smote_oversample(m, 8, 0, 0), Error);
}

TEST(Smote, SegmentPropertyAndProvenance) {
  const auto m = random_samples(30, 12, 7);
  const SmoteResult r = smote_oversample(m, 200, 5, 3);
  ASSERT_EQ(r.samples.size(), 200u);
  ASSERT_EQ(r.origins.size(), 170u);
  const auto kth = kth_distance(m, 5);
  for (std::size_t s = 0; s < r.origins.size(); ++s) {
    const SyntheticOrigin& o = r.origins[s];
    const Eigen::VectorXd& x = m[o.parent].features;
    const Eigen::VectorXd& y = m[o.neighbor].features;
    const Eigen::VectorXd& z = r.samples[m.size() + s].features;
    ASSERT_GE(o.u, 0.0);
    ASSERT_LE(o.u, 1.0);
    ASSERT_NE(o.parent, o.neighbor);
    // Exact reconstruction and coordinate-wise bounds.
    EXPECT_EQ(z, (x + o.u * (y - x)).eval());
    for (Eigen::Index c = 0; c < z.size(); ++c) {
      EXPECT_GE(z(c), std::min(x(c), y(c)));
      EXPECT_LE(z(c), std::max(x(c), y(c)));
    }
    EXPECT_LE((x - y).squaredNorm(), kth[o.parent] * (1 + 1e-12));
    EXPECT_EQ(r.samples[m.size() + s].label, 1);
  }
}

TEST(Smote, NeighborsMatchBruteForceOn200) {
  const auto m = random_samples(200, 6, 21);
  const auto nn = nearest_neighbors(m, 5);
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (j == i) continue;
      double sq = 0.0;
      for (Eigen::Index c = 0; c < 6; ++c) sq += std::pow(m[i].features(c) - m[j].features(c), 2);
      all.emplace_back(sq, j);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected;
    for (std::size_t r = 0; r < 5; ++r) expected.push_back(all[r].second);
    EXPECT_EQ(nn[i], expected) << i;
  }
}

TEST(Smote, KCappedAtSizeMinusOne) {
  const auto m = random_samples(3, 2, 5);
  const auto nn = nearest_neighbors(m, 10);
  for (const auto& row : nn) EXPECT_EQ(row.size(), 2u);
  EXPECT_EQ(smote_oversample(m, 20, 10, 1).samples.size(), 20u);
}

TEST(Smote, Deterministic) {
  const auto m = random_samples(10, 4, 2);
  const SmoteResult a = smote_oversample(m, 40, 5, 99);
  const SmoteResult b = smote_oversample(m, 40, 5, 99);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].features, b.samples[i].features);
}

TEST(Undersample, Examples) {
  const std::vector<int> pop{5, 6, 7, 8};
  auto same = undersample_majority(std::span<const int>(pop), 4, 1);
  std::sort(same.begin(), same.end());
  EXPECT_EQ(same, pop);
  EXPECT_TRUE(undersample_majority(std::span<const int>(pop), 0, 1).empty());
  try {
    undersample_indices(4, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTargetTooLarge);
  }
}

TEST(Undersample, NoReplacementSortedDeterministic) {
  const auto a = undersample_indices(1000, 300, 5);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 300u);
  EXPECT_EQ(a, undersample_indices(1000, 300, 5));
}

TEST(Undersample, ApproximatelyUniform) {
  // Chi-square over 10,000 draws of 3 from 20; df = 19, p = 0.001 critical value 43.82.
  constexpr std::size_t kPop = 20, kTake = 3, kTrials = 10000;
  std::vector<double> counts(kPop, 0.0);
  for (std::size_t trial = 0; trial < kTrials; ++trial) {
    for (std::size_t i : undersample_indices(kPop, kTake, trial)) counts[i] += 1.0;
  }
  const double expected = static_cast<double>(kTrials * kTake) / kPop;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 43.82);
}

TEST(Rebalance, CountArithmetic) {
  const auto minority = random_samples(10, 3, 8);
  const RebalancePlan p = rebalance(minority, 1000, 40, 5, 1);
  EXPECT_EQ(p.majority_indices.size(), 20u);
  EXPECT_EQ(p.minority.samples.size(), 20u);
  EXPECT_EQ(p.minority.origins.size(), 10u);
}

TEST(Rebalance, AlreadyBalancedIsIdentity) {
  const auto minority = random_samples(8, 3, 8);
  const RebalancePlan p = rebalance(minority, 8, 16, 5, 1);
  EXPECT_EQ(p.majority_indices.size(), 8u);
  EXPECT_TRUE(p.minority.origins.empty());
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(p.majority_indices[i], i);
}

TEST(Rebalance, OddTotalWithinOne) {
  const auto minority = random_samples(5, 2, 3);
  const RebalancePlan p = rebalance(minority, 50, 41, 5, 1);
  const auto a = static_cast<long>(p.majority_indices.size());
  const auto b = static_cast<long>(p.minority.samples.size());
  EXPECT_EQ(a + b, 41);
  EXPECT_LE(std::labs(a - b), 1);
}

TEST(Rebalance, PaperScaleCountsOnly) {
  // 8,640 + 416,944 rebalanced to 400,000 splits evenly; checked on the
  // undersampling half because building 191k synthetics is not needed here.
  EXPECT_EQ(undersample_indices(416944, 400000 / 2, 0).size(), 200000u);
  EXPECT_EQ(400000 - 400000 / 2, 200000);
}

TEST(Rebalance, NeedsBothClasses) {
  EXPECT_THROW(rebalance(std::vector<FlatSample>{}, 10, 20, 5, 0), Error);
  const auto minority = random_samples(5, 2, 3);
  EXPECT_THROW(rebalance(minority, 0, 20, 5, 0), Error);
}
