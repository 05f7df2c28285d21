#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "opseq/encoding.hpp"
#include "opseq/error.hpp"

namespace opseq {

/// A code-vector sequence flattened step-major: features[t * embed_dim + j].
struct FlatSample {
  Eigen::VectorXd features;
  int label = 0;
};

inline Eigen::VectorXd flatten(const CodeVectorSequence& cv) {
  // Column-major storage of embed_dim x T is already step-major.
  return Eigen::Map<const Eigen::VectorXd>(cv.steps.data(), cv.steps.size());
}

/// Inverse of flatten. The mask is recovered as the prefix ending at the last
/// step holding a nonzero entry, which matches right-padded inputs.
inline CodeVectorSequence unflatten(const Eigen::VectorXd& features, std::size_t embed_dim) {
  if (embed_dim == 0 || features.size() % static_cast<Eigen::Index>(embed_dim) != 0) {
    throw Error(ErrorCode::kDimensionMismatch, "feature length is not a multiple of embed_dim");
  }
  const auto dim = static_cast<Eigen::Index>(embed_dim);
  const Eigen::Index steps = features.size() / dim;
  CodeVectorSequence cv;
  cv.steps = Eigen::Map<const Eigen::MatrixXd>(features.data(), dim, steps);
  Eigen::Index last = -1;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    if (!cv.steps.col(t).isZero(0.0)) {
      last = t;
      break;
    }
  }
  cv.mask.assign(static_cast<std::size_t>(steps), 0);
  for (Eigen::Index t = 0; t <= last; ++t) cv.mask[static_cast<std::size_t>(t)] = 1;
  return cv;
}

/// Where a synthetic sample came from: parent + u * (neighbor - parent).
struct SyntheticOrigin {
  std::size_t parent = 0;
  std::size_t neighbor = 0;
  double u = 0.0;
};

/// Originals first, then one synthetic per entry of `origins`, in order.
struct SmoteResult {
  std::vector<FlatSample> samples;
  std::vector<SyntheticOrigin> origins;
};

/// k nearest neighbours (Euclidean, self excluded) of every sample by brute
/// force. Ties resolve toward the lower index.
inline std::vector<std::vector<std::size_t>> nearest_neighbors(std::span<const FlatSample> samples, std::size_t k) {
  const std::size_t n = samples.size();
  std::vector<std::vector<std::size_t>> out(n);
  if (n == 0) return out;
  k = std::min(k, n - 1);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.emplace_back((samples[i].features - samples[j].features).squaredNorm(), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    out[i].reserve(k);
    for (std::size_t r = 0; r < k; ++r) out[i].push_back(dist[r].second);
  }
  return out;
}

inline FlatSample synthesize(std::span<const FlatSample> minority, const SyntheticOrigin& origin) {
  if (origin.parent >= minority.size() || origin.neighbor >= minority.size()) {
    throw Error(ErrorCode::kIndexOutOfRange, "synthetic origin refers past the minority set");
  }
  const FlatSample& x = minority[origin.parent];
  const FlatSample& nn = minority[origin.neighbor];
  return {x.features + origin.u * (nn.features - x.features), x.label};
}

/// Grows `minority` to `target_count` samples with SMOTE interpolation.
inline SmoteResult smote_oversample(std::span<const FlatSample> minority, std::size_t target_count,
                                    std::size_t k = 5, std::uint64_t seed = 0) {
  if (minority.size() < 2) {
    throw Error(ErrorCode::kTooFewSamples, "SMOTE needs at least two minority samples");
  }
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be at least 1");
  if (target_count < minority.size()) {
    throw Error(ErrorCode::kInvalidArgument, "target_count below the number of originals");
  }
  SmoteResult result;
  result.samples.assign(minority.begin(), minority.end());
  const std::size_t needed = target_count - minority.size();
  if (needed == 0) return result;

  const auto neighbors = nearest_neighbors(minority, k);
  const std::size_t k_eff = std::min(k, minority.size() - 1);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_parent(0, minority.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_neighbor(0, k_eff - 1);
  std::uniform_real_distribution<double> gap(0.0, 1.0);
  result.samples.reserve(target_count);
  result.origins.reserve(needed);
  for (std::size_t s = 0; s < needed; ++s) {
    SyntheticOrigin origin;
    origin.parent = pick_parent(rng);
    origin.neighbor = neighbors[origin.parent][pick_neighbor(rng)];
    origin.u = gap(rng);
    result.samples.push_back(synthesize(minority, origin));
    result.origins.push_back(origin);
  }
  return result;
}

/// Uniform subset of `target_count` indices out of `population`, without
/// replacement, returned in ascending order.
inline std::vector<std::size_t> undersample_indices(std::size_t population, std::size_t target_count,
                                                    std::uint64_t seed = 0) {
  if (target_count > population) {
    throw Error(ErrorCode::kTargetTooLarge, "cannot draw " + std::to_string(target_count) + " of " +
                                                std::to_string(population));
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < target_count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(target_count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <class T>
std::vector<T> undersample_majority(std::span<const T> majority, std::size_t target_count, std::uint64_t seed = 0) {
  std::vector<T> out;
  out.reserve(target_count);
  for (std::size_t i : undersample_indices(majority.size(), target_count, seed)) out.push_back(majority[i]);
  return out;
}

struct RebalancePlan {
  SmoteResult minority;
  std::vector<std::size_t> majority_indices;
};

/// Balanced training set of `total` samples: the majority is undersampled to
/// total/2 and the minority oversampled to the rest.
inline RebalancePlan rebalance(std::span<const FlatSample> minority, std::size_t majority_size, std::size_t total,
                               std::size_t k = 5, std::uint64_t seed = 0) {
  if (minority.empty() || majority_size == 0) {
    throw Error(ErrorCode::kEmptyClass, "rebalancing needs both classes");
  }
  std::mt19937_64 seeds(seed);
  const std::uint64_t smote_seed = seeds();
  const std::uint64_t under_seed = seeds();
  RebalancePlan plan;
  plan.majority_indices = undersample_indices(majority_size, total / 2, under_seed);
  plan.minority = smote_oversample(minority, total - total / 2, k, smote_seed);
  return plan;
}

}  // namespace opseq
