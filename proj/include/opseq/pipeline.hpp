#pragma once

// End-to-end pipeline steps behind the command-line tool. Each function is
// reproducible from its inputs and RunConfig alone.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opseq/bench.hpp"
#include "opseq/checkpoint.hpp"
#include "opseq/config.hpp"
#include "opseq/dataset.hpp"
#include "opseq/encoding.hpp"
#include "opseq/error.hpp"
#include "opseq/evm_disasm.hpp"
#include "opseq/io.hpp"
#include "opseq/lstm.hpp"
#include "opseq/metrics.hpp"
#include "opseq/smote.hpp"

namespace opseq::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Independent stream of randomness for each pipeline stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kSplitStream = 1, kInitStream = 2, kSmoteStream = 3, kTrainStream = 4 };

struct NamedSequence {
  std::string address;
  OpcodeSequence sequence;
};

/// Reads contracts for disassembly or scanning. A stream whose first
/// non-blank character is '{' is a JSONL corpus; anything else holds one hex
/// bytecode per line. Blank lines are skipped, so write "0x" for an empty
/// contract.
inline std::vector<NamedSequence> read_contracts(std::istream& in) {
  std::vector<NamedSequence> out;
  std::string line;
  std::size_t line_no = 0;
  int format = 0;  // 0 unknown, 1 hex, 2 jsonl
  while (std::getline(in, line)) {
    ++line_no;
    if (io::is_blank(line)) continue;
    if (format == 0) format = line[line.find_first_not_of(" \t")] == '{' ? 2 : 1;
    if (format == 2) {
      ContractRecord r = io::record_from_json(io::parse_json_line(line, line_no), line_no);
      out.push_back({r.address, std::move(r.sequence)});
      continue;
    }
    try {
      out.push_back({"line-" + std::to_string(line_no), disassemble(parse_hex(line))});
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.message(), line_no);
    }
  }
  return out;
}

/// JSONL of {address, mnemonics, tokens, raw_len}, one line per contract.
inline std::size_t run_disasm(std::istream& in, std::ostream& out) {
  const std::vector<NamedSequence> contracts = read_contracts(in);
  for (const NamedSequence& c : contracts) out << io::disasm_to_json(c.address, c.sequence).dump() << '\n';
  return contracts.size();
}

inline std::vector<std::size_t> class_counts(std::span<const ContractRecord> records) {
  std::vector<std::size_t> counts(2, 0);
  for (const ContractRecord& r : records) ++counts[static_cast<std::size_t>(r.label)];
  return counts;
}

inline std::vector<FlatSample> minority_flats(std::span<const ContractRecord> minority, const EmbeddingMatrix& embedding,
                                              std::size_t max_len) {
  std::vector<FlatSample> flats;
  flats.reserve(minority.size());
  for (const ContractRecord& r : minority) {
    flats.push_back({flatten(embed(pad_or_truncate(r.sequence.tokens, max_len), embedding)), r.label});
  }
  return flats;
}

struct PrepSummary {
  std::size_t input_records = 0;
  std::size_t after_filter = 0;
  std::size_t after_dedup = 0;
  std::vector<std::size_t> train_counts, validation_counts, test_counts;
  std::size_t balanced_majority = 0;
  std::size_t balanced_minority = 0;
  std::size_t synthetic = 0;
  LengthStats lengths;
};

/// Filter, deduplicate, split 64/16/20, initialise the model and plan the
/// SMOTE rebalance of the training split. Writes into cfg.prep_dir:
///   train.jsonl validation.jsonl test.jsonl   unpadded records
///   init.ckpt                                 initial parameters (embedding used for SMOTE)
///   smote.jsonl                               one {parent, neighbor, u} per synthetic sample;
///                                             indices count label-1 train records in file order
///   manifest.json                             seed, fractions, addresses, balanced selection
///   prep_report.json                          class counts and length statistics
inline PrepSummary run_prep(const RunConfig& cfg, const InstructionTable& table = InstructionTable::evm()) {
  cfg.validate();
  if (cfg.corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "no corpus given");
  const std::vector<ContractRecord> records = io::read_corpus(cfg.corpus);
  PrepSummary summary;
  summary.input_records = records.size();
  const std::vector<ContractRecord> filtered = filter_invalid(records, cfg.max_invalid_fraction);
  summary.after_filter = filtered.size();
  const std::vector<ContractRecord> unique = dedup_by_opcode(filtered);
  summary.after_dedup = unique.size();
  const auto totals = class_counts(unique);
  if (totals[0] == 0 || totals[1] == 0) {
    throw Error(ErrorCode::kEmptyClass, "corpus needs both vulnerable and not-vulnerable records after cleaning");
  }
  summary.lengths = length_stats(unique);

  const SplitFractions fractions;
  const DatasetSplit split = stratified_split(unique, fractions, derive_seed(cfg.seed, kSplitStream));
  summary.train_counts = class_counts(split.train);
  summary.validation_counts = class_counts(split.validation);
  summary.test_counts = class_counts(split.test);

  const ModelParams init = ModelParams::initialize(cfg.dims(table.vocab_size()), derive_seed(cfg.seed, kInitStream));
  std::vector<ContractRecord> minority;
  std::size_t majority_size = 0;
  for (const ContractRecord& r : split.train) {
    if (r.label == 1) minority.push_back(r);
    else ++majority_size;
  }
  const std::size_t total = cfg.train_total == 0 ? 2 * majority_size : cfg.train_total;
  const std::vector<FlatSample> flats = minority_flats(minority, init.embedding, cfg.max_len);
  const RebalancePlan plan = rebalance(flats, majority_size, total, cfg.smote_k, derive_seed(cfg.seed, kSmoteStream));
  summary.balanced_majority = plan.majority_indices.size();
  summary.balanced_minority = plan.minority.samples.size();
  summary.synthetic = plan.minority.origins.size();

  fs::create_directories(cfg.prep_dir);
  const fs::path dir(cfg.prep_dir);
  io::write_records((dir / "train.jsonl").string(), split.train);
  io::write_records((dir / "validation.jsonl").string(), split.validation);
  io::write_records((dir / "test.jsonl").string(), split.test);
  save_checkpoint(init, (dir / "init.ckpt").string());
  {
    auto out = io::open_output((dir / "smote.jsonl").string());
    for (const SyntheticOrigin& o : plan.minority.origins) {
      out << json{{"parent", o.parent}, {"neighbor", o.neighbor}, {"u", o.u}}.dump() << '\n';
    }
  }
  auto addresses = [](std::span<const ContractRecord> rs) {
    std::vector<std::string> a;
    for (const ContractRecord& r : rs) a.push_back(r.address);
    return a;
  };
  json manifest = {
      {"seed", cfg.seed},
      {"fractions", {fractions.train, fractions.validation, fractions.test}},
      {"max_len", cfg.max_len},
      {"splits",
       {{"train", addresses(split.train)}, {"validation", addresses(split.validation)}, {"test", addresses(split.test)}}},
      {"balanced",
       {{"total", total},
        {"majority_indices", plan.majority_indices},
        {"minority_originals", minority.size()},
        {"synthetic", plan.minority.origins.size()},
        {"smote_k", cfg.smote_k}}},
  };
  io::open_output((dir / "manifest.json").string()) << manifest.dump(2) << '\n';

  auto counts_json = [](const std::vector<std::size_t>& c) { return json{{"not_vulnerable", c[0]}, {"vulnerable", c[1]}}; };
  std::vector<ContractRecord> by_class[2];
  for (const ContractRecord& r : unique) by_class[r.label].push_back(r);
  json report = {
      {"input_records", summary.input_records},
      {"after_invalid_filter", summary.after_filter},
      {"after_dedup", summary.after_dedup},
      {"train", counts_json(summary.train_counts)},
      {"validation", counts_json(summary.validation_counts)},
      {"test", counts_json(summary.test_counts)},
      {"balanced_train", {{"not_vulnerable", summary.balanced_majority}, {"vulnerable", summary.balanced_minority},
                          {"synthetic", summary.synthetic}}},
      {"length_stats",
       {{"all", io::to_json(summary.lengths)},
        {"not_vulnerable", io::to_json(length_stats(by_class[0]))},
        {"vulnerable", io::to_json(length_stats(by_class[1]))}}},
  };
  io::open_output((dir / "prep_report.json").string()) << report.dump(2) << '\n';
  return summary;
}

/// Balanced training examples and validation examples from a prep directory.
struct PreparedData {
  ModelParams init;
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
};

inline PreparedData load_prepared(const std::string& prep_dir) {
  const fs::path dir(prep_dir);
  PreparedData data;
  data.init = load_checkpoint((dir / "init.ckpt").string());
  const std::size_t max_len = data.init.dims.max_len;
  const std::vector<ContractRecord> train = io::read_corpus((dir / "train.jsonl").string());
  const std::vector<ContractRecord> validation = io::read_corpus((dir / "validation.jsonl").string());
  json manifest;
  {
    auto in = io::open_input((dir / "manifest.json").string());
    try {
      in >> manifest;
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParseError, std::string("manifest.json: ") + e.what());
    }
  }

  std::vector<ContractRecord> minority, majority;
  for (const ContractRecord& r : train) (r.label == 1 ? minority : majority).push_back(r);
  for (std::size_t idx : manifest.at("balanced").at("majority_indices").get<std::vector<std::size_t>>()) {
    if (idx >= majority.size()) throw Error(ErrorCode::kIndexOutOfRange, "manifest majority index out of range");
    data.train.push_back({pad_or_truncate(majority[idx].sequence.tokens, max_len), 0});
  }
  for (const ContractRecord& r : minority) data.train.push_back({pad_or_truncate(r.sequence.tokens, max_len), 1});

  std::vector<std::vector<TokenId>> minority_tokens;
  for (const ContractRecord& r : minority) minority_tokens.push_back(pad_or_truncate(r.sequence.tokens, max_len));
  auto in = io::open_input((dir / "smote.jsonl").string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (io::is_blank(line)) continue;
    const json j = io::parse_json_line(line, line_no);
    const SyntheticOrigin origin{j.at("parent").get<std::size_t>(), j.at("neighbor").get<std::size_t>(),
                                 j.at("u").get<double>()};
    if (origin.parent >= minority.size() || origin.neighbor >= minority.size() || !(origin.u >= 0.0 && origin.u <= 1.0)) {
      throw Error(ErrorCode::kIndexOutOfRange, "smote.jsonl line " + std::to_string(line_no) + ": bad provenance",
                  line_no);
    }
    data.train.push_back({TokenBlend{minority_tokens[origin.parent], minority_tokens[origin.neighbor], origin.u}, 1});
  }
  for (const ContractRecord& r : validation) {
    data.validation.push_back({pad_or_truncate(r.sequence.tokens, max_len), r.label});
  }
  return data;
}

struct TrainSummary {
  TrainResult result;
  std::size_t train_examples = 0;
};

/// Trains from cfg.prep_dir and writes cfg.checkpoint plus history.csv and
/// train_report.json under cfg.report_dir.
inline TrainSummary run_train(const RunConfig& cfg, const std::function<void(const EpochStats&)>& on_epoch = {}) {
  cfg.validate();
  PreparedData data = load_prepared(cfg.prep_dir);
  TrainConfig tc = cfg.train_config();
  tc.seed = derive_seed(cfg.seed, kTrainStream);
  TrainSummary summary;
  summary.train_examples = data.train.size();
  summary.result = train(std::move(data.init), data.train, data.validation, tc, on_epoch);

  save_checkpoint(summary.result.params, cfg.checkpoint);
  fs::create_directories(cfg.report_dir);
  const fs::path dir(cfg.report_dir);
  {
    auto out = io::open_output((dir / "history.csv").string());
    io::write_history_csv(out, summary.result.history);
  }
  const EpochStats& last = summary.result.history.back();
  json report = {
      {"checkpoint", cfg.checkpoint},
      {"parameter_count", summary.result.params.parameter_count()},
      {"train_examples", summary.train_examples},
      {"validation_examples", data.validation.size()},
      {"epochs_run", summary.result.history.size()},
      {"best_epoch", summary.result.best_epoch},
      {"final_train_loss", last.train_loss},
      {"final_train_accuracy", last.train_accuracy},
      {"final_val_loss", io::optional_json(last.val_loss)},
      {"final_val_accuracy", io::optional_json(last.val_accuracy)},
  };
  io::open_output((dir / "train_report.json").string()) << report.dump(2) << '\n';
  return summary;
}

inline void write_metrics(const MetricsReport& report, const std::string& report_dir) {
  fs::create_directories(report_dir);
  const fs::path dir(report_dir);
  io::open_output((dir / "eval_report.json").string()) << io::to_json(report).dump(2) << '\n';
  if (!report.roc.empty()) {
    auto out = io::open_output((dir / "roc.csv").string());
    io::write_roc_csv(out, report.roc);
  }
}

/// Scores a labelled JSONL split (e.g. prepared test.jsonl) with a checkpoint.
inline MetricsReport run_eval(const ModelParams& params, std::span<const ContractRecord> records, double threshold) {
  if (records.empty()) throw Error(ErrorCode::kEmptyCorpus, "nothing to evaluate");
  std::vector<TrainingExample> examples;
  std::vector<int> truth;
  for (const ContractRecord& r : records) {
    examples.push_back({pad_or_truncate(r.sequence.tokens, params.dims.max_len), r.label});
    truth.push_back(r.label);
  }
  const std::vector<double> probs = predict_probabilities(params, examples);
  return evaluate_scores(probs, truth, threshold);
}

/// Metrics from a stored predictions CSV. ROC AUC needs a score on every row.
inline MetricsReport run_eval_predictions(std::istream& in) {
  const std::vector<io::LabelledPrediction> rows = io::read_predictions_csv(in);
  std::vector<int> predicted, actual;
  std::vector<double> scores_list;
  bool all_scored = !rows.empty();
  for (const auto& r : rows) {
    predicted.push_back(r.predicted);
    actual.push_back(r.actual);
    if (r.score) scores_list.push_back(*r.score);
    else all_scored = false;
  }
  MetricsReport report;
  report.matrix = confusion(predicted, actual);
  report.scores = scores(report.matrix);
  const bool both = report.matrix.tp + report.matrix.fn > 0 && report.matrix.fp + report.matrix.tn > 0;
  if (all_scored && both) {
    report.roc_auc = roc_auc(scores_list, actual);
    report.roc = roc_points(scores_list, actual);
  }
  return report;
}

struct ScanResult {
  std::string address;
  std::size_t raw_len = 0;
  double probability = 0.0;
  int label = 0;
};

inline std::vector<ScanResult> run_scan(const ModelParams& params, std::span<const NamedSequence> contracts,
                                        double threshold) {
  std::vector<ScanResult> out;
  out.reserve(contracts.size());
  for (const NamedSequence& c : contracts) {
    const Prediction p = predict(params, pad_or_truncate(c.sequence.tokens, params.dims.max_len), threshold);
    out.push_back({c.address, c.sequence.raw_len, p.probability, p.label});
  }
  return out;
}

inline void write_bench(const BenchReport& report, const std::string& report_dir) {
  fs::create_directories(report_dir);
  const fs::path dir(report_dir);
  io::open_output((dir / "bench_report.json").string()) << io::to_json(report).dump(2) << '\n';
  auto out = io::open_output((dir / "bench.csv").string());
  io::write_bench_csv(out, report);
}

/// Synthetic labelled corpus as JSONL with bytecode_hex, the format prep reads.
inline void write_synthetic_corpus(std::ostream& out, const SyntheticCorpusOptions& options) {
  const std::vector<ContractRecord> records = generate_synthetic_corpus(options);
  std::mt19937_64 operand_rng(derive_seed(options.seed, 99));
  for (const ContractRecord& r : records) {
    const std::vector<std::uint8_t> code = assemble(std::span<const TokenId>(r.sequence.tokens), operand_rng);
    out << json{{"address", r.address}, {"bytecode_hex", "0x" + to_hex(code)},
                {"category", std::string(to_string(r.category))}}
               .dump()
        << '\n';
  }
}

}  // namespace opseq::pipeline
