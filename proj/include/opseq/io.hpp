#pragma once

#include <cstddef>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opseq/bench.hpp"
#include "opseq/dataset.hpp"
#include "opseq/error.hpp"
#include "opseq/evm_disasm.hpp"
#include "opseq/lstm.hpp"
#include "opseq/metrics.hpp"

namespace opseq::io {

using json = nlohmann::json;

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  return out;
}

inline bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

inline json parse_json_line(const std::string& line, std::size_t line_no) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
  }
}

/// Corpus line: {"address", "bytecode_hex" | "tokens", "category"}. Tokens
/// may be mnemonics or ids.
inline ContractRecord record_from_json(const json& j, std::size_t line_no,
                                       const InstructionTable& table = InstructionTable::evm()) {
  auto where = [&](const std::string& what) { return "line " + std::to_string(line_no) + ": " + what; };
  try {
    ContractRecord r;
    const std::string address = j.value("address", "line-" + std::to_string(line_no));
    OpcodeSequence seq;
    if (j.contains("bytecode_hex")) {
      seq = disassemble(parse_hex(j.at("bytecode_hex").get<std::string>()), table);
    } else if (j.contains("tokens")) {
      std::vector<TokenId> ids;
      for (const json& t : j.at("tokens")) {
        ids.push_back(t.is_string() ? table.token_id(t.get<std::string>()) : t.get<TokenId>());
        if (!table.is_valid_token(ids.back()) || ids.back() == kPadToken) {
          throw Error(ErrorCode::kIndexOutOfRange, "token id " + std::to_string(ids.back()) + " not allowed");
        }
      }
      seq = make_sequence(std::move(ids), table);
    } else {
      throw Error(ErrorCode::kParseError, "record has neither bytecode_hex nor tokens");
    }
    Category category = Category::kNone;
    if (j.contains("category")) {
      const json& c = j.at("category");
      category = parse_category(c.is_string() ? c.get<std::string>() : std::to_string(c.get<int>()));
    }
    return ContractRecord::make(address, std::move(seq), category);
  } catch (const Error& e) {
    throw Error(e.code(), where(e.message()), line_no);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, where(e.what()), line_no);
  }
}

inline std::vector<ContractRecord> read_corpus(std::istream& in, const InstructionTable& table = InstructionTable::evm()) {
  std::vector<ContractRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    records.push_back(record_from_json(parse_json_line(line, line_no), line_no, table));
  }
  return records;
}

inline std::vector<ContractRecord> read_corpus(const std::string& path) {
  auto in = open_input(path);
  return read_corpus(in);
}

/// Prepared-split line: token ids, unpadded.
inline json record_to_json(const ContractRecord& r) {
  return {{"address", r.address}, {"tokens", r.sequence.tokens}, {"category", std::string(to_string(r.category))}};
}

inline void write_records(const std::string& path, std::span<const ContractRecord> records) {
  auto out = open_output(path);
  for (const ContractRecord& r : records) out << record_to_json(r).dump() << '\n';
}

inline json disasm_to_json(const std::string& address, const OpcodeSequence& seq) {
  std::vector<std::string> mnemonics(seq.mnemonics.begin(), seq.mnemonics.end());
  return {{"address", address}, {"mnemonics", mnemonics}, {"tokens", seq.tokens}, {"raw_len", seq.raw_len}};
}

inline json to_json(const LengthStats& s) {
  return {{"mode", s.mode}, {"median", s.median}, {"mean", std::round(s.mean * 10.0) / 10.0}, {"min", s.min}, {"max", s.max}};
}

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json optional_percent(const std::optional<double>& v) {
  return v ? json(std::round(*v * 10000.0) / 100.0) : json(nullptr);
}

inline json to_json(const MetricsReport& r) {
  json roc = json::array();
  for (const RocPoint& p : r.roc) roc.push_back({p.fpr, p.tpr});
  return {
      {"confusion", {{"tp", r.matrix.tp}, {"fp", r.matrix.fp}, {"fn", r.matrix.fn}, {"tn", r.matrix.tn}}},
      {"accuracy", optional_json(r.scores.accuracy)},
      {"precision", optional_json(r.scores.precision)},
      {"recall", optional_json(r.scores.recall)},
      {"f1", optional_json(r.scores.f1)},
      {"roc_auc", optional_json(r.roc_auc)},
      {"percent",
       {{"accuracy", optional_percent(r.scores.accuracy)},
        {"precision", optional_percent(r.scores.precision)},
        {"recall", optional_percent(r.scores.recall)},
        {"f1", optional_percent(r.scores.f1)},
        {"roc_auc", optional_percent(r.roc_auc)}}},
      {"roc_points", roc},
  };
}

inline void write_roc_csv(std::ostream& out, std::span<const RocPoint> points) {
  out << "fpr,tpr\n" << std::setprecision(17);
  for (const RocPoint& p : points) out << p.fpr << ',' << p.tpr << '\n';
}

inline void write_history_csv(std::ostream& out, std::span<const EpochStats> history) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n" << std::setprecision(17);
  for (const EpochStats& e : history) {
    out << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',';
    if (e.val_loss) out << *e.val_loss;
    out << ',';
    if (e.val_accuracy) out << *e.val_accuracy;
    out << '\n';
  }
}

inline json to_json(const BenchReport& r) {
  json buckets = json::array();
  for (const BenchBucket& b : r.buckets) {
    buckets.push_back({{"length", b.length},
                       {"mean_seconds", b.mean_seconds},
                       {"std_seconds", b.std_seconds},
                       {"n", b.n},
                       {"forward_mean_seconds", b.forward_mean_seconds}});
  }
  return {{"buckets", buckets}, {"forward_cv", r.forward_cv()}, {"machine", r.machine}, {"timestamp", r.timestamp}};
}

inline void write_bench_csv(std::ostream& out, const BenchReport& r) {
  out << "length,mean_s,std_s\n" << std::setprecision(9);
  for (const BenchBucket& b : r.buckets) out << b.length << ',' << b.mean_seconds << ',' << b.std_seconds << '\n';
}

struct LabelledPrediction {
  int predicted = 0;
  int actual = 0;
  std::optional<double> score;
};

/// CSV with header "predicted,actual" and an optional third "score" column.
inline std::vector<LabelledPrediction> read_predictions_csv(std::istream& in) {
  std::vector<LabelledPrediction> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("predicted", 0) == 0) continue;
    }
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    const bool has_score = static_cast<bool>(std::getline(ss, c, ','));
    LabelledPrediction p;
    try {
      p.predicted = std::stoi(a);
      p.actual = std::stoi(b);
      if (has_score && !is_blank(c)) p.score = std::stod(c);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": malformed prediction row", line_no);
    }
    if ((p.predicted != 0 && p.predicted != 1) || (p.actual != 0 && p.actual != 1)) {
      throw Error(ErrorCode::kParseError, "line " + std::to_string(line_no) + ": labels must be 0 or 1", line_no);
    }
    rows.push_back(p);
  }
  return rows;
}

}  // namespace opseq::io
