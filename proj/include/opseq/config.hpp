#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>

#include "opseq/error.hpp"
#include "opseq/lstm.hpp"

namespace opseq {

/// Every knob of the pipeline. Loaded from a flat key=value file; command-line
/// flags override file values.
struct RunConfig {
  std::size_t max_len = 1600;
  std::size_t embed_dim = 150;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  std::size_t batch_size = 256;
  std::size_t epochs = 256;
  double lr = 1e-3;
  double clip_norm = 5.0;
  std::size_t smote_k = 5;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  std::size_t patience = 0;
  // Balanced training-set size; 0 keeps every majority record.
  std::size_t train_total = 0;
  double max_invalid_fraction = 0.0;

  std::string corpus;
  std::string prep_dir = "prepared";
  std::string checkpoint = "model.ckpt";
  std::string report_dir = "reports";

  ModelDims dims(std::size_t vocab_size) const { return {vocab_size, embed_dim, hidden1, hidden2, max_len}; }

  TrainConfig train_config() const { return {epochs, batch_size, lr, clip_norm, seed, patience}; }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be positive");
    };
    positive(max_len, "max_len");
    positive(embed_dim, "embed_dim");
    positive(hidden1, "hidden1");
    positive(hidden2, "hidden2");
    positive(batch_size, "batch_size");
    positive(epochs, "epochs");
    positive(smote_k, "smote_k");
    if (!(lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "lr must be positive");
    if (!(clip_norm > 0.0)) throw Error(ErrorCode::kInvalidArgument, "clip_norm must be positive");
    if (threshold < 0.0 || threshold > 1.0) throw Error(ErrorCode::kInvalidArgument, "threshold must lie in [0, 1]");
    if (max_invalid_fraction < 0.0 || max_invalid_fraction > 1.0) {
      throw Error(ErrorCode::kInvalidArgument, "max_invalid_fraction must lie in [0, 1]");
    }
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::size_t to_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParseError, key + ": expected a non-negative integer, got '" + value + "'");
  }
}

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParseError, key + ": expected a number, got '" + value + "'");
  }
}

}  // namespace detail

/// Sets one field. Keys accept '-' or '_' as separators.
inline void apply_config_value(RunConfig& cfg, std::string key, const std::string& value) {
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "max_len") cfg.max_len = detail::to_size(key, value);
  else if (key == "embed_dim") cfg.embed_dim = detail::to_size(key, value);
  else if (key == "hidden1") cfg.hidden1 = detail::to_size(key, value);
  else if (key == "hidden2") cfg.hidden2 = detail::to_size(key, value);
  else if (key == "batch_size") cfg.batch_size = detail::to_size(key, value);
  else if (key == "epochs") cfg.epochs = detail::to_size(key, value);
  else if (key == "lr") cfg.lr = detail::to_double(key, value);
  else if (key == "clip_norm") cfg.clip_norm = detail::to_double(key, value);
  else if (key == "smote_k") cfg.smote_k = detail::to_size(key, value);
  else if (key == "threshold") cfg.threshold = detail::to_double(key, value);
  else if (key == "seed") cfg.seed = detail::to_size(key, value);
  else if (key == "patience") cfg.patience = detail::to_size(key, value);
  else if (key == "train_total") cfg.train_total = detail::to_size(key, value);
  else if (key == "max_invalid_fraction") cfg.max_invalid_fraction = detail::to_double(key, value);
  else if (key == "corpus") cfg.corpus = value;
  else if (key == "prep_dir") cfg.prep_dir = value;
  else if (key == "checkpoint") cfg.checkpoint = value;
  else if (key == "report_dir") cfg.report_dir = value;
  else throw Error(ErrorCode::kParseError, "unknown config key '" + key + "'");
}

/// Lines of key=value; '#' starts a comment.
inline void load_config(RunConfig& cfg, std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string content = detail::trim(line);
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kParseError, "config line " + std::to_string(line_no) + ": expected key=value", line_no);
    }
    try {
      apply_config_value(cfg, detail::trim(content.substr(0, eq)), detail::trim(content.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.code(), "config line " + std::to_string(line_no) + ": " + e.message(), line_no);
    }
  }
}

inline void load_config(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open config " + path);
  load_config(cfg, in);
}

}  // namespace opseq
