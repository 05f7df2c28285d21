#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <sys/utsname.h>

#include "opseq/checkpoint.hpp"
#include "opseq/dataset.hpp"
#include "opseq/encoding.hpp"
#include "opseq/evm_disasm.hpp"
#include "opseq/lstm.hpp"

namespace opseq {

inline const std::vector<std::size_t> kDefaultBenchLengths = {500, 1000, 1500, 2000, 4000, 8000, 12000, 20000, 25000};

struct BenchOptions {
  std::vector<std::size_t> lengths = kDefaultBenchLengths;
  std::size_t contracts_per_bucket = 5;
  std::uint64_t seed = 0;
};

struct BenchBucket {
  std::size_t length = 0;
  double mean_seconds = 0.0;  // full scan: disassemble, pad, embed, forward
  double std_seconds = 0.0;
  std::size_t n = 0;
  double forward_mean_seconds = 0.0;  // classifier only
};

struct BenchReport {
  std::vector<BenchBucket> buckets;
  std::string machine;
  std::string timestamp;

  /// Coefficient of variation of the per-bucket classifier-only means.
  double forward_cv() const {
    if (buckets.empty()) return 0.0;
    double mean = 0.0;
    for (const auto& b : buckets) mean += b.forward_mean_seconds;
    mean /= static_cast<double>(buckets.size());
    double var = 0.0;
    for (const auto& b : buckets) var += (b.forward_mean_seconds - mean) * (b.forward_mean_seconds - mean);
    var /= static_cast<double>(buckets.size());
    return mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  }
};

inline std::string machine_descriptor() {
  std::string out;
  utsname info{};
  if (uname(&info) == 0) {
    out = std::string(info.sysname) + " " + info.release + " " + info.machine;
  }
#if defined(__clang__)
  out += ", clang " __clang_version__;
#elif defined(__GNUC__)
  out += ", gcc " __VERSION__;
#endif
  out += ", " + std::to_string(std::thread::hardware_concurrency()) + " hw threads";
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Random bytecode whose disassembly has exactly `length` real instructions.
template <class Rng>
std::vector<std::uint8_t> random_bytecode(std::size_t length, Rng& rng, const InstructionTable& table = InstructionTable::evm()) {
  std::uniform_int_distribution<TokenId> pick(2, static_cast<TokenId>(table.vocab_size()) - 1);
  std::vector<TokenId> tokens(length);
  for (auto& t : tokens) t = pick(rng);
  return assemble(std::span<const TokenId>(tokens), rng, table);
}

/// Per-contract analysis latency across raw opcode lengths. Single-threaded;
/// one untimed warm-up scan precedes each bucket.
inline BenchReport run_bench(const ModelParams& params, const BenchOptions& options = {}) {
  using clock = std::chrono::steady_clock;
  BenchReport report;
  report.machine = machine_descriptor();
  report.timestamp = utc_timestamp();
  std::mt19937_64 rng(options.seed);

  auto scan = [&](const std::vector<std::uint8_t>& code) {
    const OpcodeSequence seq = disassemble(code);
    const std::vector<TokenId> padded = pad_or_truncate(seq.tokens, params.dims.max_len);
    return forward(params, ModelInput(embed(padded, params.embedding)), Unroll::kFull);
  };

  volatile double sink = 0.0;
  for (std::size_t length : options.lengths) {
    std::vector<std::vector<std::uint8_t>> contracts;
    for (std::size_t i = 0; i < options.contracts_per_bucket; ++i) contracts.push_back(random_bytecode(length, rng));
    if (!contracts.empty()) sink = sink + scan(contracts.front());

    std::vector<double> scan_times, forward_times;
    for (const auto& code : contracts) {
      const auto t0 = clock::now();
      sink = sink + scan(code);
      const auto t1 = clock::now();
      scan_times.push_back(std::chrono::duration<double>(t1 - t0).count());

      const ModelInput input(embed(pad_or_truncate(disassemble(code).tokens, params.dims.max_len), params.embedding));
      const auto t2 = clock::now();
      sink = sink + forward(params, input, Unroll::kFull);
      const auto t3 = clock::now();
      forward_times.push_back(std::chrono::duration<double>(t3 - t2).count());
    }

    BenchBucket bucket;
    bucket.length = length;
    bucket.n = scan_times.size();
    for (double t : scan_times) bucket.mean_seconds += t;
    for (double t : forward_times) bucket.forward_mean_seconds += t;
    if (bucket.n > 0) {
      bucket.mean_seconds /= static_cast<double>(bucket.n);
      bucket.forward_mean_seconds /= static_cast<double>(bucket.n);
    }
    if (bucket.n > 1) {
      double var = 0.0;
      for (double t : scan_times) var += (t - bucket.mean_seconds) * (t - bucket.mean_seconds);
      bucket.std_seconds = std::sqrt(var / static_cast<double>(bucket.n - 1));
    }
    report.buckets.push_back(bucket);
  }
  return report;
}

inline BenchReport run_bench(const std::string& checkpoint_path, const BenchOptions& options = {}) {
  return run_bench(load_checkpoint(checkpoint_path), options);
}

}  // namespace opseq
