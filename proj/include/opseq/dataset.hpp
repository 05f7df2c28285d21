#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "opseq/error.hpp"
#include "opseq/evm_disasm.hpp"

namespace opseq {

enum class Category { kNone, kSuicidal, kProdigal, kGreedy, kSuicidalAndProdigal };

constexpr std::string_view to_string(Category c) noexcept {
  switch (c) {
    case Category::kNone: return "none";
    case Category::kSuicidal: return "suicidal";
    case Category::kProdigal: return "prodigal";
    case Category::kGreedy: return "greedy";
    case Category::kSuicidalAndProdigal: return "suicidal_and_prodigal";
  }
  return "none";
}

inline Category parse_category(std::string_view text) {
  for (Category c : {Category::kNone, Category::kSuicidal, Category::kProdigal, Category::kGreedy,
                     Category::kSuicidalAndProdigal}) {
    if (text == to_string(c)) return c;
  }
  if (text == "0") return Category::kNone;
  throw Error(ErrorCode::kParseError, "unknown category '" + std::string(text) + "'");
}

struct ContractRecord {
  std::string address;
  OpcodeSequence sequence;
  int label = 0;
  Category category = Category::kNone;

  static ContractRecord make(std::string address, OpcodeSequence sequence, Category category) {
    ContractRecord r;
    r.address = std::move(address);
    r.sequence = std::move(sequence);
    r.category = category;
    r.label = category == Category::kNone ? 0 : 1;
    return r;
  }
};

/// Builds an OpcodeSequence from token ids, filling in mnemonics.
inline OpcodeSequence make_sequence(std::vector<TokenId> tokens, const InstructionTable& table = InstructionTable::evm()) {
  OpcodeSequence seq;
  seq.mnemonics.reserve(tokens.size());
  for (TokenId t : tokens) seq.mnemonics.push_back(table.mnemonic(t));
  seq.tokens = std::move(tokens);
  seq.raw_len = seq.tokens.size();
  return seq;
}

struct SplitFractions {
  double train = 0.64;
  double validation = 0.16;
  double test = 0.20;
};

struct DatasetSplit {
  std::vector<ContractRecord> train;
  std::vector<ContractRecord> validation;
  std::vector<ContractRecord> test;
  std::uint64_t seed = 0;
  SplitFractions fractions;
};

struct LengthStats {
  std::size_t mode = 0;
  std::size_t median = 0;
  double mean = 0.0;
  std::size_t min = 0;
  std::size_t max = 0;
};

namespace detail {

struct TokenVectorHash {
  std::size_t operator()(const std::vector<TokenId>& v) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (TokenId t : v) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t));
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

}  // namespace detail

/// Keeps the first record of every distinct token sequence, in input order.
inline std::vector<ContractRecord> dedup_by_opcode(std::span<const ContractRecord> records) {
  std::unordered_set<std::vector<TokenId>, detail::TokenVectorHash> seen;
  std::vector<ContractRecord> out;
  for (const ContractRecord& r : records) {
    if (seen.insert(r.sequence.tokens).second) out.push_back(r);
  }
  return out;
}

/// Drops records whose fraction of INVALID tokens exceeds `max_fraction`.
/// With the default of 0 any INVALID token disqualifies the record.
inline std::vector<ContractRecord> filter_invalid(std::span<const ContractRecord> records,
                                                  double max_fraction = 0.0) {
  std::vector<ContractRecord> out;
  for (const ContractRecord& r : records) {
    const auto& tokens = r.sequence.tokens;
    const auto invalid = static_cast<double>(std::count(tokens.begin(), tokens.end(), kInvalidToken));
    const double fraction = tokens.empty() ? 0.0 : invalid / static_cast<double>(tokens.size());
    if (fraction <= max_fraction) out.push_back(r);
  }
  return out;
}

/// Per-class shuffled split. Train and test take the floor of their share and
/// validation takes what is left, so 451 records become 288/73/90.
inline DatasetSplit stratified_split(std::span<const ContractRecord> records,
                                     SplitFractions fractions = {}, std::uint64_t seed = 0) {
  const double sum = fractions.train + fractions.validation + fractions.test;
  if (std::abs(sum - 1.0) > 1e-9 || fractions.train < 0 || fractions.validation < 0 || fractions.test < 0) {
    throw Error(ErrorCode::kInvalidArgument, "split fractions must be non-negative and sum to 1");
  }
  if (records.empty()) {
    throw Error(ErrorCode::kEmptyClass, "no records in either class");
  }
  {
    std::unordered_set<std::vector<TokenId>, detail::TokenVectorHash> seen;
    for (const ContractRecord& r : records) {
      if (!seen.insert(r.sequence.tokens).second) {
        throw Error(ErrorCode::kDuplicateSequence,
                    "record " + r.address + " repeats an earlier opcode sequence; deduplicate first");
      }
    }
  }

  DatasetSplit split;
  split.seed = seed;
  split.fractions = fractions;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].label == label) members.push_back(i);
    }
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    const auto n = static_cast<double>(members.size());
    const auto n_train = static_cast<std::size_t>(std::floor(fractions.train * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(fractions.test * n + 1e-9));
    const std::size_t n_val = members.size() - n_train - n_test;
    train_idx.insert(train_idx.end(), members.begin(), members.begin() + n_train);
    val_idx.insert(val_idx.end(), members.begin() + n_train, members.begin() + n_train + n_val);
    test_idx.insert(test_idx.end(), members.begin() + n_train + n_val, members.end());
  }
  auto gather = [&](std::vector<std::size_t>& idx, std::vector<ContractRecord>& out) {
    std::sort(idx.begin(), idx.end());
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(records[i]);
  };
  gather(train_idx, split.train);
  gather(val_idx, split.validation);
  gather(test_idx, split.test);
  return split;
}

/// Right-pads with PAD or keeps the first `max_len` tokens.
inline std::vector<TokenId> pad_or_truncate(std::span<const TokenId> tokens, std::size_t max_len = 1600) {
  if (max_len == 0) throw Error(ErrorCode::kInvalidArgument, "max_len must be at least 1");
  std::vector<TokenId> out(max_len, kPadToken);
  std::copy_n(tokens.begin(), std::min(max_len, tokens.size()), out.begin());
  return out;
}

/// Mode breaks ties toward the smaller length; median is the lower middle.
inline LengthStats length_stats(std::span<const std::size_t> lengths) {
  if (lengths.empty()) throw Error(ErrorCode::kEmptyCorpus, "length statistics need at least one record");
  std::vector<std::size_t> sorted(lengths.begin(), lengths.end());
  std::sort(sorted.begin(), sorted.end());
  LengthStats s;
  s.min = sorted.front();
  s.max = sorted.back();
  s.median = sorted[(sorted.size() - 1) / 2];
  long double total = 0;
  for (std::size_t v : sorted) total += v;
  s.mean = static_cast<double>(total / sorted.size());
  std::size_t best_count = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (j - i > best_count) {
      best_count = j - i;
      s.mode = sorted[i];
    }
    i = j;
  }
  return s;
}

inline LengthStats length_stats(std::span<const ContractRecord> records) {
  std::vector<std::size_t> lengths;
  lengths.reserve(records.size());
  for (const ContractRecord& r : records) lengths.push_back(r.sequence.raw_len);
  return length_stats(std::span<const std::size_t>(lengths));
}

inline std::vector<TokenId> default_motif(const InstructionTable& table = InstructionTable::evm()) {
  return {table.token_id("CALLER"), table.token_id("SELFDESTRUCT")};
}

struct SyntheticCorpusOptions {
  std::size_t count = 0;
  double vulnerable_fraction = 0.05;
  std::vector<TokenId> motif;  // empty selects default_motif()
  std::uint64_t seed = 0;
  std::size_t min_length = 40;
  std::size_t max_length = 3000;
  // The motif ends before this position. Set it to the model's max_len so the
  // label stays visible after truncation.
  std::size_t motif_window = std::numeric_limits<std::size_t>::max();
  Category vulnerable_category = Category::kSuicidal;
};

inline std::string random_address(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> raw(20);
  for (auto& b : raw) b = static_cast<std::uint8_t>(byte(rng));
  return "0x" + to_hex(raw);
}

/// Desk-scale labelled corpus. Background tokens are drawn uniformly from the
/// real instructions that do not occur in the motif, so label-0 records never
/// contain it. Lengths are log-uniform in [min_length, max_length].
inline std::vector<ContractRecord> generate_synthetic_corpus(const SyntheticCorpusOptions& options,
                                                             const InstructionTable& table = InstructionTable::evm()) {
  if (options.count == 0) return {};
  if (!(options.vulnerable_fraction > 0.0 && options.vulnerable_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "vulnerable_fraction must lie in (0, 1)");
  }
  const std::vector<TokenId> motif = options.motif.empty() ? default_motif(table) : options.motif;
  if (options.min_length < motif.size() || options.min_length > options.max_length || options.min_length == 0) {
    throw Error(ErrorCode::kInvalidArgument, "length range must hold the motif");
  }
  if (options.motif_window < motif.size()) {
    throw Error(ErrorCode::kInvalidArgument, "motif_window shorter than the motif");
  }
  for (TokenId t : motif) {
    if (t < 2 || !table.is_valid_token(t)) throw Error(ErrorCode::kInvalidArgument, "motif must use real instructions");
  }

  std::vector<TokenId> background;
  for (TokenId t = 2; t < static_cast<TokenId>(table.vocab_size()); ++t) {
    if (std::find(motif.begin(), motif.end(), t) == motif.end()) background.push_back(t);
  }

  std::mt19937_64 rng(options.seed);
  const auto n_vulnerable = static_cast<std::size_t>(
      std::llround(options.vulnerable_fraction * static_cast<double>(options.count)));
  std::vector<int> labels(options.count, 0);
  std::fill_n(labels.begin(), std::min(n_vulnerable, options.count), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_real_distribution<double> log_len(std::log(static_cast<double>(options.min_length)),
                                                 std::log(static_cast<double>(options.max_length)));
  std::uniform_int_distribution<std::size_t> pick(0, background.size() - 1);

  std::vector<ContractRecord> records;
  records.reserve(options.count);
  for (std::size_t i = 0; i < options.count; ++i) {
    auto length = static_cast<std::size_t>(std::llround(std::exp(log_len(rng))));
    length = std::clamp(length, options.min_length, options.max_length);
    const bool vulnerable = labels[i] == 1;
    std::vector<TokenId> tokens(vulnerable ? length - motif.size() : length);
    for (auto& t : tokens) t = background[pick(rng)];
    if (vulnerable) {
      const std::size_t last_start = std::min(length, options.motif_window) - motif.size();
      std::uniform_int_distribution<std::size_t> where(0, last_start);
      tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(where(rng)), motif.begin(), motif.end());
    }
    records.push_back(ContractRecord::make(random_address(rng), make_sequence(std::move(tokens), table),
                                           vulnerable ? options.vulnerable_category : Category::kNone));
  }
  return records;
}

}  // namespace opseq
