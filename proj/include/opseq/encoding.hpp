#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "opseq/error.hpp"
#include "opseq/evm_disasm.hpp"

namespace opseq {

/// Dense opcode representation: column `t` is the code vector of token `t`.
/// Column 0 (PAD) stays zero.
struct EmbeddingMatrix {
  Eigen::MatrixXd values;  // embed_dim x vocab_size

  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t vocab_size() const noexcept { return static_cast<std::size_t>(values.cols()); }

  static EmbeddingMatrix zeros(std::size_t embed_dim, std::size_t vocab_size) {
    return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(embed_dim), static_cast<Eigen::Index>(vocab_size))};
  }

  /// Uniform in [-scale, scale] with a zero PAD column.
  template <class Rng>
  static EmbeddingMatrix random(std::size_t embed_dim, std::size_t vocab_size, Rng& rng, double scale = 0.05) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    EmbeddingMatrix e = zeros(embed_dim, vocab_size);
    for (Eigen::Index c = 1; c < e.values.cols(); ++c) {
      for (Eigen::Index r = 0; r < e.values.rows(); ++r) e.values(r, c) = dist(rng);
    }
    return e;
  }
};

/// A padded sequence in code-vector space. `steps` is embed_dim x length;
/// mask[t] is 1 for a real token and 0 for padding.
struct CodeVectorSequence {
  Eigen::MatrixXd steps;
  std::vector<std::uint8_t> mask;

  std::size_t length() const noexcept { return mask.size(); }
  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(steps.rows()); }
};

inline Eigen::VectorXd one_hot(TokenId token, std::size_t vocab_size) {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "token " + std::to_string(token) + " outside vocabulary of " + std::to_string(vocab_size));
  }
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab_size));
  v(token) = 1.0;
  return v;
}

/// Column selection: identical to E * one_hot(token) without the product.
inline CodeVectorSequence embed(std::span<const TokenId> tokens, const EmbeddingMatrix& embedding) {
  CodeVectorSequence out;
  out.steps.resize(embedding.values.rows(), static_cast<Eigen::Index>(tokens.size()));
  out.mask.resize(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= embedding.vocab_size()) {
      throw Error(ErrorCode::kIndexOutOfRange, "token " + std::to_string(id) + " at step " + std::to_string(t));
    }
    const auto col = static_cast<Eigen::Index>(t);
    if (id == kPadToken) {
      out.steps.col(col).setZero();
      out.mask[t] = 0;
    } else {
      out.steps.col(col) = embedding.values.col(id);
      out.mask[t] = 1;
    }
  }
  return out;
}

}  // namespace opseq
