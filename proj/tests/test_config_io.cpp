#include <sstream>

#include <gtest/gtest.h>

#include "opseq/config.hpp"
#include "opseq/io.hpp"

using namespace opseq;

TEST(Config, Defaults) {
  const RunConfig c;
  EXPECT_EQ(c.max_len, 1600u);
  EXPECT_EQ(c.embed_dim, 150u);
  EXPECT_EQ(c.hidden1, 128u);
  EXPECT_EQ(c.hidden2, 64u);
  EXPECT_EQ(c.batch_size, 256u);
  EXPECT_EQ(c.epochs, 256u);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.smote_k, 5u);
  EXPECT_EQ(c.threshold, 0.5);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesFile) {
  RunConfig c;
  std::istringstream in("# desk run\nmax_len = 256\nembed-dim=32\n\nlr=0.003  # faster\ncorpus = data/c.jsonl\n");
  load_config(c, in);
  EXPECT_EQ(c.max_len, 256u);
  EXPECT_EQ(c.embed_dim, 32u);
  EXPECT_EQ(c.lr, 0.003);
  EXPECT_EQ(c.corpus, "data/c.jsonl");
}

TEST(Config, ErrorsCarryLine) {
  RunConfig c;
  std::istringstream bad_key("epochs=3\nwidth=4\n");
  try {
    load_config(c, bad_key);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
    EXPECT_EQ(e.position(), 2u);
  }
  std::istringstream no_eq("epochs\n");
  EXPECT_THROW(load_config(c, no_eq), Error);
  EXPECT_THROW(apply_config_value(c, "epochs", "-1"), Error);
  EXPECT_THROW(apply_config_value(c, "lr", "fast"), Error);
}

TEST(Config, ValidateRejects) {
  RunConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), Error);
  c = RunConfig{};
  c.threshold = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c = RunConfig{};
  c.lr = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Io, CorpusFromHexAndTokens) {
  std::istringstream in(
      "{\"address\":\"a\",\"bytecode_hex\":\"0x6001ff\",\"category\":\"suicidal\"}\n"
      "\n"
      "{\"address\":\"b\",\"tokens\":[\"STOP\",\"ADD\"]}\n");
  const auto records = io::read_corpus(in);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].label, 1);
  EXPECT_EQ(records[0].sequence.mnemonics, (std::vector<std::string_view>{"PUSH1", "SELFDESTRUCT"}));
  EXPECT_EQ(records[1].label, 0);
  EXPECT_EQ(records[1].sequence.raw_len, 2u);
}

TEST(Io, CorpusErrorsCiteLine) {
  std::istringstream in("{\"bytecode_hex\":\"0x00\"}\n{\"bytecode_hex\":\"0x0\"}\n");
  try {
    io::read_corpus(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOddHexLength);
    EXPECT_EQ(e.position(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  std::istringstream pad("{\"tokens\":[0]}\n");
  EXPECT_THROW(io::read_corpus(pad), Error);
  std::istringstream garbage("not json\n");
  EXPECT_THROW(io::read_corpus(garbage), Error);
}

TEST(Io, RecordRoundTrip) {
  std::istringstream in("{\"address\":\"x\",\"bytecode_hex\":\"0x33ff00\",\"category\":\"greedy\"}\n");
  const auto r = io::read_corpus(in).at(0);
  std::istringstream again(io::record_to_json(r).dump() + "\n");
  const auto back = io::read_corpus(again).at(0);
  EXPECT_EQ(back.sequence.tokens, r.sequence.tokens);
  EXPECT_EQ(back.category, r.category);
  EXPECT_EQ(back.address, "x");
}

TEST(Io, PredictionsCsv) {
  std::istringstream in("predicted,actual,score\n1,1,0.9\n0,1,0.2\n\n0,0,0.1\n");
  const auto rows = io::read_predictions_csv(in);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].predicted, 0);
  EXPECT_EQ(rows[1].actual, 1);
  EXPECT_EQ(*rows[0].score, 0.9);
  std::istringstream no_header("1,0\n");
  EXPECT_EQ(io::read_predictions_csv(no_header).size(), 1u);
  std::istringstream bad("predicted,actual\n2,0\n");
  EXPECT_THROW(io::read_predictions_csv(bad), Error);
}

TEST(Io, HistoryCsv) {
  std::ostringstream out;
  std::vector<EpochStats> h{{1, 0.5, 0.75, 0.25, 1.0}, {2, 0.25, 1.0, std::nullopt, std::nullopt}};
  io::write_history_csv(out, h);
  EXPECT_EQ(out.str(), "epoch,train_loss,train_acc,val_loss,val_acc\n1,0.5,0.75,0.25,1\n2,0.25,1,,\n");
}
