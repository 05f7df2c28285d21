#include <algorithm>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "opseq/dataset.hpp"

using namespace opseq;

namespace {

ContractRecord record(std::vector<TokenId> tokens, Category category = Category::kNone, std::string address = "a") {
  return ContractRecord::make(std::move(address), make_sequence(std::move(tokens)), category);
}

// n distinct single-class records: token i+2 repeated to a unique pattern.
std::vector<ContractRecord> distinct_records(std::size_t n, Category category, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(2, 150);
  std::set<std::vector<TokenId>> seen;
  std::vector<ContractRecord> out;
  while (out.size() < n) {
    std::vector<TokenId> t(5 + out.size() % 7);
    for (auto& x : t) x = tok(rng);
    if (seen.insert(t).second) out.push_back(record(t, category, "r" + std::to_string(out.size())));
  }
  return out;
}

bool contains(const std::vector<TokenId>& haystack, const std::vector<TokenId>& needle) {
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

}  // namespace

TEST(Category, LabelFollowsCategory) {
  EXPECT_EQ(record({2}, Category::kNone).label, 0);
  for (Category c : {Category::kSuicidal, Category::kProdigal, Category::kGreedy, Category::kSuicidalAndProdigal}) {
    EXPECT_EQ(record({2}, c).label, 1);
    EXPECT_EQ(parse_category(to_string(c)), c);
  }
  EXPECT_EQ(parse_category("0"), Category::kNone);
  EXPECT_EQ(parse_category("none"), Category::kNone);
  EXPECT_THROW(parse_category("bogus"), Error);
}

TEST(Dedup, Examples) {
  EXPECT_TRUE(dedup_by_opcode(std::vector<ContractRecord>{}).empty());
  const std::vector<ContractRecord> two = {record({2, 3}, Category::kNone, "x"), record({2, 3}, Category::kGreedy, "y")};
  const auto one = dedup_by_opcode(two);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].address, "x");
}

TEST(Dedup, MatchesBruteForce) {
  const auto base = distinct_records(17, Category::kNone, 3);
  std::vector<ContractRecord> corpus;
  for (int copy = 0; copy < 4; ++copy) corpus.insert(corpus.end(), base.begin(), base.end());
  std::shuffle(corpus.begin(), corpus.end(), std::mt19937_64(1));
  const auto unique = dedup_by_opcode(corpus);
  EXPECT_EQ(unique.size(), 17u);
  // Stable: each kept record is the first occurrence.
  std::size_t next = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    bool earlier = false;
    for (std::size_t j = 0; j < i; ++j) earlier |= corpus[j].sequence.tokens == corpus[i].sequence.tokens;
    if (!earlier) {
      ASSERT_LT(next, unique.size());
      EXPECT_EQ(unique[next++].address, corpus[i].address);
    }
  }
}

TEST(FilterInvalid, DefaultDropsAnyInvalid) {
  const std::vector<ContractRecord> rs = {record({2, 3}), record({2, kInvalidToken}), record({1, 1, 2, 3})};
  EXPECT_EQ(filter_invalid(rs).size(), 1u);
  EXPECT_EQ(filter_invalid(rs, 0.5).size(), 3u);
  EXPECT_EQ(filter_invalid(rs, 0.49).size(), 1u);
}

TEST(Split, PaperFixture451) {
  const auto rs = distinct_records(451, Category::kNone, 11);
  const DatasetSplit s = stratified_split(rs, {}, 0);
  EXPECT_EQ(s.train.size(), 288u);
  EXPECT_EQ(s.validation.size(), 73u);
  EXPECT_EQ(s.test.size(), 90u);
}

TEST(Split, SmallCounts) {
  const DatasetSplit s100 = stratified_split(distinct_records(100, Category::kGreedy, 2), {}, 4);
  EXPECT_EQ(s100.train.size(), 64u);
  EXPECT_EQ(s100.validation.size(), 16u);
  EXPECT_EQ(s100.test.size(), 20u);
  const DatasetSplit s10 = stratified_split(distinct_records(10, Category::kNone, 2), {}, 4);
  EXPECT_EQ(s10.train.size(), 6u);
  EXPECT_EQ(s10.validation.size(), 2u);
  EXPECT_EQ(s10.test.size(), 2u);
}

TEST(Split, StratifiedPerClass) {
  auto rs = distinct_records(500, Category::kNone, 5);
  const auto pos = distinct_records(50, Category::kSuicidal, 6);
  // Different seeds can collide with class-0 sequences; keep only new ones.
  rs.insert(rs.end(), pos.begin(), pos.end());
  rs = dedup_by_opcode(rs);
  std::size_t n1 = 0;
  for (const auto& r : rs) n1 += r.label;
  const DatasetSplit s = stratified_split(rs, {}, 9);
  auto count1 = [](const std::vector<ContractRecord>& v) {
    std::size_t c = 0;
    for (const auto& r : v) c += r.label;
    return c;
  };
  EXPECT_EQ(count1(s.train), n1 * 64 / 100);
  EXPECT_EQ(count1(s.test), n1 * 20 / 100);
  EXPECT_EQ(count1(s.train) + count1(s.validation) + count1(s.test), n1);
}

TEST(Split, DisjointAndCompleteForManySeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto rs = distinct_records(120, Category::kNone, seed + 100);
    const auto pos = distinct_records(15, Category::kProdigal, seed + 1000);
    rs.insert(rs.end(), pos.begin(), pos.end());
    rs = dedup_by_opcode(rs);
    const DatasetSplit s = stratified_split(rs, {}, seed);
    std::set<std::vector<TokenId>> seen;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      for (const auto& r : *part) ASSERT_TRUE(seen.insert(r.sequence.tokens).second);
    }
    ASSERT_EQ(seen.size(), rs.size());
  }
}

TEST(Split, DeterministicGivenSeed) {
  const auto rs = distinct_records(200, Category::kNone, 8);
  const DatasetSplit a = stratified_split(rs, {}, 42);
  const DatasetSplit b = stratified_split(rs, {}, 42);
  const DatasetSplit c = stratified_split(rs, {}, 43);
  auto addresses = [](const std::vector<ContractRecord>& v) {
    std::vector<std::string> out;
    for (const auto& r : v) out.push_back(r.address);
    return out;
  };
  EXPECT_EQ(addresses(a.train), addresses(b.train));
  EXPECT_EQ(addresses(a.test), addresses(b.test));
  EXPECT_NE(addresses(a.train), addresses(c.train));
}

TEST(Split, Errors) {
  try {
    stratified_split(std::vector<ContractRecord>{}, {}, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyClass);
  }
  EXPECT_THROW(stratified_split(distinct_records(10, Category::kNone, 1), {0.5, 0.5, 0.5}, 0), Error);
  const std::vector<ContractRecord> dup = {record({2}), record({2})};
  EXPECT_THROW(stratified_split(dup, {}, 0), Error);
}

TEST(PadOrTruncate, Examples) {
  const std::vector<TokenId> three{4, 5, 6};
  EXPECT_EQ(pad_or_truncate(three, 5), (std::vector<TokenId>{4, 5, 6, 0, 0}));
  std::vector<TokenId> exact(1600, 7);
  EXPECT_EQ(pad_or_truncate(exact), exact);
  std::vector<TokenId> long_input(30000);
  for (std::size_t i = 0; i < long_input.size(); ++i) long_input[i] = static_cast<TokenId>(2 + i % 149);
  const auto cut = pad_or_truncate(long_input);
  ASSERT_EQ(cut.size(), 1600u);
  EXPECT_TRUE(std::equal(cut.begin(), cut.end(), long_input.begin()));
  EXPECT_THROW(pad_or_truncate(three, 0), Error);
}

TEST(PadOrTruncate, Idempotent) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len(0, 40);
  for (int i = 0; i < 200; ++i) {
    std::vector<TokenId> t(len(rng), 9);
    const auto once = pad_or_truncate(t, 20);
    EXPECT_EQ(pad_or_truncate(once, 20), once);
  }
}

TEST(LengthStats, Examples) {
  const std::vector<std::size_t> one{5};
  const LengthStats a = length_stats(one);
  EXPECT_EQ(a.mode, 5u);
  EXPECT_EQ(a.median, 5u);
  EXPECT_DOUBLE_EQ(a.mean, 5.0);
  const std::vector<std::size_t> four{1, 2, 2, 9};
  const LengthStats b = length_stats(four);
  EXPECT_EQ(b.mode, 2u);
  EXPECT_EQ(b.median, 2u);
  EXPECT_DOUBLE_EQ(b.mean, 3.5);
  EXPECT_EQ(b.min, 1u);
  EXPECT_EQ(b.max, 9u);
  // Tie on frequency goes to the smaller length; even count takes the lower middle.
  const std::vector<std::size_t> tie{8, 8, 3, 3, 10, 11};
  EXPECT_EQ(length_stats(tie).mode, 3u);
  EXPECT_EQ(length_stats(tie).median, 8u);
  EXPECT_THROW(length_stats(std::vector<std::size_t>{}), Error);
}

TEST(LengthStats, InvariantsOnRandomInput) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> v(2, 60000);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> xs(1 + trial);
    for (auto& x : xs) x = v(rng);
    const LengthStats s = length_stats(xs);
    EXPECT_LE(s.min, s.mode);
    EXPECT_LE(s.mode, s.max);
    EXPECT_LE(s.min, s.median);
    EXPECT_LE(s.median, s.max);
    EXPECT_GE(s.mean, static_cast<double>(s.min));
    EXPECT_LE(s.mean, static_cast<double>(s.max));
  }
}

TEST(Synthetic, CountsAndMotif) {
  SyntheticCorpusOptions o;
  o.count = 10;
  o.vulnerable_fraction = 0.5;
  o.seed = 1;
  const auto rs = generate_synthetic_corpus(o);
  ASSERT_EQ(rs.size(), 10u);
  const auto motif = default_motif();
  std::size_t vulnerable = 0;
  for (const auto& r : rs) {
    vulnerable += r.label;
    EXPECT_EQ(contains(r.sequence.tokens, motif), r.label == 1);
    EXPECT_EQ(r.address.size(), 42u);
  }
  EXPECT_EQ(vulnerable, 5u);
  o.count = 0;
  EXPECT_TRUE(generate_synthetic_corpus(o).empty());
}

TEST(Synthetic, MotifAbsentFromNegativesAtScale) {
  SyntheticCorpusOptions o;
  o.count = 400;
  o.vulnerable_fraction = 0.1;
  o.seed = 9;
  const auto motif = default_motif();
  const InstructionTable& t = InstructionTable::evm();
  EXPECT_EQ(t.mnemonic(motif.back()), "SELFDESTRUCT");
  for (const auto& r : generate_synthetic_corpus(o)) {
    EXPECT_GE(r.sequence.tokens.size(), 40u);
    EXPECT_LE(r.sequence.tokens.size(), 3000u);
    EXPECT_EQ(contains(r.sequence.tokens, motif), r.label == 1);
    for (TokenId id : r.sequence.tokens) EXPECT_GE(id, 2);
  }
}

TEST(Synthetic, MotifWindowAndDeterminism) {
  SyntheticCorpusOptions o;
  o.count = 200;
  o.vulnerable_fraction = 0.5;
  o.seed = 4;
  o.motif_window = 64;
  const auto a = generate_synthetic_corpus(o);
  const auto b = generate_synthetic_corpus(o);
  const auto motif = default_motif();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].sequence.tokens, b[i].sequence.tokens);
    EXPECT_EQ(a[i].address, b[i].address);
    if (a[i].label == 1) {
      const auto head = pad_or_truncate(a[i].sequence.tokens, 64);
      EXPECT_TRUE(contains(head, motif));
    }
  }
}

TEST(Synthetic, RejectsBadOptions) {
  SyntheticCorpusOptions o;
  o.count = 5;
  o.vulnerable_fraction = 1.0;
  EXPECT_THROW(generate_synthetic_corpus(o), Error);
  o.vulnerable_fraction = 0.5;
  o.motif = {kPadToken};
  EXPECT_THROW(generate_synthetic_corpus(o), Error);
}
