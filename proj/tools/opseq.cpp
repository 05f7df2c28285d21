#include <cstdio>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "opseq/opseq.hpp"

namespace {

using opseq::RunConfig;
namespace pipeline = opseq::pipeline;
using json = nlohmann::json;

// Flags that mirror RunConfig keys. Values are kept as text and applied after
// the config file so that flags win.
const std::vector<std::pair<const char*, const char*>> kConfigFlags = {
    {"max-len", "Opcode sequence length after pad/truncate"},
    {"embed-dim", "Code vector size"},
    {"hidden1", "First LSTM layer width"},
    {"hidden2", "Second LSTM layer width"},
    {"batch-size", "Mini-batch size"},
    {"epochs", "Training epochs"},
    {"lr", "Adam learning rate"},
    {"clip-norm", "Global gradient-norm clip"},
    {"smote-k", "SMOTE neighbours"},
    {"threshold", "Decision threshold on the vulnerable probability"},
    {"seed", "Seed for every random stream"},
    {"patience", "Early-stopping patience in epochs (0 disables)"},
    {"train-total", "Balanced training-set size (0 = twice the majority count)"},
    {"max-invalid-fraction", "Drop records with a larger share of INVALID tokens"},
    {"corpus", "Labelled JSONL corpus"},
    {"prep-dir", "Directory for prepared splits"},
    {"checkpoint", "Model checkpoint path"},
    {"report-dir", "Directory for JSON/CSV reports"},
};

struct ConfigFlags {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    for (const auto& [name, help] : kConfigFlags) {
      const std::string key = name;
      app.add_option_function<std::string>(
          std::string("--") + name, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
    }
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) opseq::load_config(cfg, config_file);
    for (const auto& [key, value] : overrides) opseq::apply_config_value(cfg, key, value);
    cfg.validate();
    return cfg;
  }
};

std::string percent(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << *v * 100.0 << "%";
  return s.str();
}

void print_metrics(const opseq::MetricsReport& r) {
  const auto& m = r.matrix;
  std::cout << "confusion  tp=" << m.tp << " fp=" << m.fp << " fn=" << m.fn << " tn=" << m.tn << "\n"
            << "accuracy   " << percent(r.scores.accuracy) << "\n"
            << "precision  " << percent(r.scores.precision) << "\n"
            << "recall     " << percent(r.scores.recall) << "\n"
            << "f1         " << percent(r.scores.f1) << "\n"
            << "roc_auc    " << percent(r.roc_auc) << "\n";
}

std::vector<pipeline::NamedSequence> read_contract_file(const std::string& path) {
  if (path == "-") return pipeline::read_contracts(std::cin);
  auto in = opseq::io::open_input(path);
  return pipeline::read_contracts(in);
}

int run(int argc, char** argv) {
  CLI::App app{"Opcode-sequence LSTM vulnerability detector for EVM bytecode"};
  app.require_subcommand(1);

  // disasm
  auto* disasm = app.add_subcommand("disasm", "Disassemble hex bytecode lines or a JSONL corpus into opcode JSONL");
  std::string disasm_in = "-", disasm_out = "-";
  disasm->add_option("input", disasm_in, "Input file ('-' for stdin)");
  disasm->add_option("-o,--output", disasm_out, "Output JSONL ('-' for stdout)");

  // prep
  auto* prep = app.add_subcommand("prep", "Clean, split and rebalance a labelled corpus");
  ConfigFlags prep_flags;
  prep_flags.attach(*prep);

  // train
  auto* train = app.add_subcommand("train", "Train the classifier on a prepared directory");
  ConfigFlags train_flags;
  train_flags.attach(*train);
  bool quiet = false;
  train->add_flag("-q,--quiet", quiet, "No per-epoch progress on stderr");

  // eval
  auto* eval = app.add_subcommand("eval", "Score a labelled split, or a stored predictions CSV");
  ConfigFlags eval_flags;
  eval_flags.attach(*eval);
  std::string eval_split, eval_predictions;
  auto* split_opt = eval->add_option("--split", eval_split, "Labelled JSONL (default: <prep-dir>/test.jsonl)");
  eval->add_option("--predictions", eval_predictions, "CSV with predicted,actual[,score]")->excludes(split_opt);

  // scan
  auto* scan = app.add_subcommand("scan", "Print vulnerability probability and label per contract");
  ConfigFlags scan_flags;
  scan_flags.attach(*scan);
  std::string scan_in;
  std::vector<std::string> scan_hex;
  scan->add_option("input", scan_in, "Hex-per-line file or JSONL corpus ('-' for stdin)");
  scan->add_option("--hex", scan_hex, "Inline bytecode (repeatable)");

  // bench
  auto* bench = app.add_subcommand("bench", "Time per-contract scans across raw opcode lengths");
  ConfigFlags bench_flags;
  bench_flags.attach(*bench);
  opseq::BenchOptions bench_options;
  bench->add_option("--lengths", bench_options.lengths, "Raw opcode lengths to bucket");
  bench->add_option("--per-bucket", bench_options.contracts_per_bucket, "Contracts per bucket")
      ->check(CLI::PositiveNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic motif-planted labelled corpus");
  opseq::SyntheticCorpusOptions synth_options;
  std::string synth_out = "-";
  synth->add_option("-n,--count", synth_options.count, "Number of contracts")->required();
  synth->add_option("--vulnerable-fraction", synth_options.vulnerable_fraction, "Share of vulnerable contracts");
  synth->add_option("--seed", synth_options.seed, "Seed");
  synth->add_option("--min-length", synth_options.min_length, "Shortest opcode length");
  synth->add_option("--max-length", synth_options.max_length, "Longest opcode length");
  synth->add_option("--motif-window", synth_options.motif_window, "Motif always ends before this position");
  synth->add_option("-o,--output", synth_out, "Output JSONL ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (*disasm) {
    auto in_file = disasm_in == "-" ? std::ifstream() : opseq::io::open_input(disasm_in);
    std::istream& in = disasm_in == "-" ? std::cin : in_file;
    if (disasm_out == "-") {
      pipeline::run_disasm(in, std::cout);
    } else {
      auto out = opseq::io::open_output(disasm_out);
      pipeline::run_disasm(in, out);
    }
    return 0;
  }

  if (*prep) {
    const RunConfig cfg = prep_flags.resolve();
    const pipeline::PrepSummary s = pipeline::run_prep(cfg);
    std::cout << "records " << s.input_records << ", after invalid filter " << s.after_filter << ", after dedup "
              << s.after_dedup << "\n"
              << "train " << s.train_counts[0] << "/" << s.train_counts[1] << "  validation " << s.validation_counts[0]
              << "/" << s.validation_counts[1] << "  test " << s.test_counts[0] << "/" << s.test_counts[1]
              << "  (not vulnerable/vulnerable)\n"
              << "balanced train " << s.balanced_majority << "/" << s.balanced_minority << " with " << s.synthetic
              << " synthetic\n"
              << "wrote " << cfg.prep_dir << "\n";
    return 0;
  }

  if (*train) {
    const RunConfig cfg = train_flags.resolve();
    auto progress = [&](const opseq::EpochStats& e) {
      if (quiet) return;
      std::cerr << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.train_loss << "  acc "
                << e.train_accuracy;
      if (e.val_loss) std::cerr << "  val_loss " << *e.val_loss << "  val_acc " << *e.val_accuracy;
      std::cerr << std::defaultfloat << "\n";
    };
    const pipeline::TrainSummary s = pipeline::run_train(cfg, progress);
    std::cout << "trained on " << s.train_examples << " examples for " << s.result.history.size()
              << " epochs, best epoch " << s.result.best_epoch << "\n"
              << "wrote " << cfg.checkpoint << "\n";
    return 0;
  }

  if (*eval) {
    const RunConfig cfg = eval_flags.resolve();
    opseq::MetricsReport report;
    if (!eval_predictions.empty()) {
      auto in = opseq::io::open_input(eval_predictions);
      report = pipeline::run_eval_predictions(in);
    } else {
      const std::string split = eval_split.empty() ? cfg.prep_dir + "/test.jsonl" : eval_split;
      const opseq::ModelParams params = opseq::load_checkpoint(cfg.checkpoint);
      report = pipeline::run_eval(params, opseq::io::read_corpus(split), cfg.threshold);
    }
    pipeline::write_metrics(report, cfg.report_dir);
    print_metrics(report);
    return 0;
  }

  if (*scan) {
    const RunConfig cfg = scan_flags.resolve();
    std::vector<pipeline::NamedSequence> contracts;
    if (!scan_in.empty()) contracts = read_contract_file(scan_in);
    for (std::size_t i = 0; i < scan_hex.size(); ++i) {
      contracts.push_back({"arg-" + std::to_string(i + 1), opseq::disassemble(opseq::parse_hex(scan_hex[i]))});
    }
    if (contracts.empty()) throw opseq::Error(opseq::ErrorCode::kInvalidArgument, "nothing to scan");
    const opseq::ModelParams params = opseq::load_checkpoint(cfg.checkpoint);
    for (const auto& r : pipeline::run_scan(params, contracts, cfg.threshold)) {
      std::cout << json{{"address", r.address}, {"raw_len", r.raw_len}, {"probability", r.probability},
                        {"label", r.label}}
                       .dump()
                << '\n';
    }
    return 0;
  }

  if (*bench) {
    const RunConfig cfg = bench_flags.resolve();
    bench_options.seed = cfg.seed;
    const opseq::BenchReport report = opseq::run_bench(cfg.checkpoint, bench_options);
    pipeline::write_bench(report, cfg.report_dir);
    std::cout << std::setw(8) << "length" << std::setw(14) << "mean_s" << std::setw(14) << "std_s" << std::setw(14)
              << "forward_s" << "\n";
    for (const auto& b : report.buckets) {
      std::cout << std::setw(8) << b.length << std::setw(14) << b.mean_seconds << std::setw(14) << b.std_seconds
                << std::setw(14) << b.forward_mean_seconds << "\n";
    }
    std::cout << "forward cv " << report.forward_cv() << "\n";
    return 0;
  }

  if (*synth) {
    if (synth_out == "-") {
      pipeline::write_synthetic_corpus(std::cout, synth_options);
    } else {
      auto out = opseq::io::open_output(synth_out);
      pipeline::write_synthetic_corpus(out, synth_options);
    }
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const opseq::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return opseq::is_input_error(e.code()) ? 1 : 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [ParseError]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
