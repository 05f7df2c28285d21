#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "opseq/error.hpp"

namespace opseq {

using TokenId = std::int32_t;

inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kInvalidToken = 1;
inline constexpr std::string_view kPadMnemonic = "PAD";
inline constexpr std::string_view kInvalidMnemonic = "INVALID";

/// One row of the EVM instruction directory. `delta` is the number of stack
/// items consumed, `alpha` the number pushed.
struct InstructionSpec {
  std::uint8_t opcode;
  std::string_view mnemonic;
  std::uint8_t delta;
  std::uint8_t alpha;
  std::uint8_t immediate_len;
};

// Ordered by opcode byte. 0xFE is the designated invalid instruction and maps
// onto the reserved INVALID token.
inline constexpr std::array<InstructionSpec, 150> kEvmInstructions = {{
    {0x00, "STOP", 0, 0, 0},
    {0x01, "ADD", 2, 1, 0},
    {0x02, "MUL", 2, 1, 0},
    {0x03, "SUB", 2, 1, 0},
    {0x04, "DIV", 2, 1, 0},
    {0x05, "SDIV", 2, 1, 0},
    {0x06, "MOD", 2, 1, 0},
    {0x07, "SMOD", 2, 1, 0},
    {0x08, "ADDMOD", 3, 1, 0},
    {0x09, "MULMOD", 3, 1, 0},
    {0x0A, "EXP", 2, 1, 0},
    {0x0B, "SIGNEXTEND", 2, 1, 0},
    {0x10, "LT", 2, 1, 0},
    {0x11, "GT", 2, 1, 0},
    {0x12, "SLT", 2, 1, 0},
    {0x13, "SGT", 2, 1, 0},
    {0x14, "EQ", 2, 1, 0},
    {0x15, "ISZERO", 1, 1, 0},
    {0x16, "AND", 2, 1, 0},
    {0x17, "OR", 2, 1, 0},
    {0x18, "XOR", 2, 1, 0},
    {0x19, "NOT", 1, 1, 0},
    {0x1A, "BYTE", 2, 1, 0},
    {0x1B, "SHL", 2, 1, 0},
    {0x1C, "SHR", 2, 1, 0},
    {0x1D, "SAR", 2, 1, 0},
    {0x1E, "CLZ", 1, 1, 0},
    {0x20, "KECCAK256", 2, 1, 0},
    {0x30, "ADDRESS", 0, 1, 0},
    {0x31, "BALANCE", 1, 1, 0},
    {0x32, "ORIGIN", 0, 1, 0},
    {0x33, "CALLER", 0, 1, 0},
    {0x34, "CALLVALUE", 0, 1, 0},
    {0x35, "CALLDATALOAD", 1, 1, 0},
    {0x36, "CALLDATASIZE", 0, 1, 0},
    {0x37, "CALLDATACOPY", 3, 0, 0},
    {0x38, "CODESIZE", 0, 1, 0},
    {0x39, "CODECOPY", 3, 0, 0},
    {0x3A, "GASPRICE", 0, 1, 0},
    {0x3B, "EXTCODESIZE", 1, 1, 0},
    {0x3C, "EXTCODECOPY", 4, 0, 0},
    {0x3D, "RETURNDATASIZE", 0, 1, 0},
    {0x3E, "RETURNDATACOPY", 3, 0, 0},
    {0x3F, "EXTCODEHASH", 1, 1, 0},
    {0x40, "BLOCKHASH", 1, 1, 0},
    {0x41, "COINBASE", 0, 1, 0},
    {0x42, "TIMESTAMP", 0, 1, 0},
    {0x43, "NUMBER", 0, 1, 0},
    {0x44, "PREVRANDAO", 0, 1, 0},
    {0x45, "GASLIMIT", 0, 1, 0},
    {0x46, "CHAINID", 0, 1, 0},
    {0x47, "SELFBALANCE", 0, 1, 0},
    {0x48, "BASEFEE", 0, 1, 0},
    {0x49, "BLOBHASH", 1, 1, 0},
    {0x4A, "BLOBBASEFEE", 0, 1, 0},
    {0x50, "POP", 1, 0, 0},
    {0x51, "MLOAD", 1, 1, 0},
    {0x52, "MSTORE", 2, 0, 0},
    {0x53, "MSTORE8", 2, 0, 0},
    {0x54, "SLOAD", 1, 1, 0},
    {0x55, "SSTORE", 2, 0, 0},
    {0x56, "JUMP", 1, 0, 0},
    {0x57, "JUMPI", 2, 0, 0},
    {0x58, "PC", 0, 1, 0},
    {0x59, "MSIZE", 0, 1, 0},
    {0x5A, "GAS", 0, 1, 0},
    {0x5B, "JUMPDEST", 0, 0, 0},
    {0x5C, "TLOAD", 1, 1, 0},
    {0x5D, "TSTORE", 2, 0, 0},
    {0x5E, "MCOPY", 3, 0, 0},
    {0x5F, "PUSH0", 0, 1, 0},
    {0x60, "PUSH1", 0, 1, 1},
    {0x61, "PUSH2", 0, 1, 2},
    {0x62, "PUSH3", 0, 1, 3},
    {0x63, "PUSH4", 0, 1, 4},
    {0x64, "PUSH5", 0, 1, 5},
    {0x65, "PUSH6", 0, 1, 6},
    {0x66, "PUSH7", 0, 1, 7},
    {0x67, "PUSH8", 0, 1, 8},
    {0x68, "PUSH9", 0, 1, 9},
    {0x69, "PUSH10", 0, 1, 10},
    {0x6A, "PUSH11", 0, 1, 11},
    {0x6B, "PUSH12", 0, 1, 12},
    {0x6C, "PUSH13", 0, 1, 13},
    {0x6D, "PUSH14", 0, 1, 14},
    {0x6E, "PUSH15", 0, 1, 15},
    {0x6F, "PUSH16", 0, 1, 16},
    {0x70, "PUSH17", 0, 1, 17},
    {0x71, "PUSH18", 0, 1, 18},
    {0x72, "PUSH19", 0, 1, 19},
    {0x73, "PUSH20", 0, 1, 20},
    {0x74, "PUSH21", 0, 1, 21},
    {0x75, "PUSH22", 0, 1, 22},
    {0x76, "PUSH23", 0, 1, 23},
    {0x77, "PUSH24", 0, 1, 24},
    {0x78, "PUSH25", 0, 1, 25},
    {0x79, "PUSH26", 0, 1, 26},
    {0x7A, "PUSH27", 0, 1, 27},
    {0x7B, "PUSH28", 0, 1, 28},
    {0x7C, "PUSH29", 0, 1, 29},
    {0x7D, "PUSH30", 0, 1, 30},
    {0x7E, "PUSH31", 0, 1, 31},
    {0x7F, "PUSH32", 0, 1, 32},
    {0x80, "DUP1", 1, 2, 0},
    {0x81, "DUP2", 2, 3, 0},
    {0x82, "DUP3", 3, 4, 0},
    {0x83, "DUP4", 4, 5, 0},
    {0x84, "DUP5", 5, 6, 0},
    {0x85, "DUP6", 6, 7, 0},
    {0x86, "DUP7", 7, 8, 0},
    {0x87, "DUP8", 8, 9, 0},
    {0x88, "DUP9", 9, 10, 0},
    {0x89, "DUP10", 10, 11, 0},
    {0x8A, "DUP11", 11, 12, 0},
    {0x8B, "DUP12", 12, 13, 0},
    {0x8C, "DUP13", 13, 14, 0},
    {0x8D, "DUP14", 14, 15, 0},
    {0x8E, "DUP15", 15, 16, 0},
    {0x8F, "DUP16", 16, 17, 0},
    {0x90, "SWAP1", 2, 2, 0},
    {0x91, "SWAP2", 3, 3, 0},
    {0x92, "SWAP3", 4, 4, 0},
    {0x93, "SWAP4", 5, 5, 0},
    {0x94, "SWAP5", 6, 6, 0},
    {0x95, "SWAP6", 7, 7, 0},
    {0x96, "SWAP7", 8, 8, 0},
    {0x97, "SWAP8", 9, 9, 0},
    {0x98, "SWAP9", 10, 10, 0},
    {0x99, "SWAP10", 11, 11, 0},
    {0x9A, "SWAP11", 12, 12, 0},
    {0x9B, "SWAP12", 13, 13, 0},
    {0x9C, "SWAP13", 14, 14, 0},
    {0x9D, "SWAP14", 15, 15, 0},
    {0x9E, "SWAP15", 16, 16, 0},
    {0x9F, "SWAP16", 17, 17, 0},
    {0xA0, "LOG0", 2, 0, 0},
    {0xA1, "LOG1", 3, 0, 0},
    {0xA2, "LOG2", 4, 0, 0},
    {0xA3, "LOG3", 5, 0, 0},
    {0xA4, "LOG4", 6, 0, 0},
    {0xF0, "CREATE", 3, 1, 0},
    {0xF1, "CALL", 7, 1, 0},
    {0xF2, "CALLCODE", 7, 1, 0},
    {0xF3, "RETURN", 2, 0, 0},
    {0xF4, "DELEGATECALL", 6, 1, 0},
    {0xF5, "CREATE2", 4, 1, 0},
    {0xFA, "STATICCALL", 6, 1, 0},
    {0xFD, "REVERT", 2, 0, 0},
    {0xFE, "INVALID", 0, 0, 0},
    {0xFF, "SELFDESTRUCT", 1, 0, 0},
}};

/// Lookup structure over an instruction directory. Token ids 0 and 1 are
/// reserved for PAD and INVALID; the remaining instructions are numbered from
/// 2 in directory order.
class InstructionTable {
 public:
  explicit InstructionTable(std::span<const InstructionSpec> entries)
      : entries_(entries.begin(), entries.end()) {
    by_byte_.fill(kInvalidToken);
    token_entry_.assign(2, -1);
    token_names_ = {kPadMnemonic, kInvalidMnemonic};
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const InstructionSpec& spec = entries_[i];
      if (spec.mnemonic == kInvalidMnemonic) {
        // Same meaning as an undefined byte: execution aborts.
        token_entry_[kInvalidToken] = static_cast<int>(i);
        continue;
      }
      const auto id = static_cast<TokenId>(token_entry_.size());
      if (by_byte_[spec.opcode] != kInvalidToken) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate opcode byte in instruction table");
      }
      by_byte_[spec.opcode] = id;
      token_entry_.push_back(static_cast<int>(i));
      token_names_.push_back(spec.mnemonic);
    }
    for (TokenId id = 0; id < static_cast<TokenId>(token_names_.size()); ++id) {
      if (!by_name_.emplace(std::string(token_names_[id]), id).second) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate mnemonic in instruction table");
      }
    }
  }

  /// The full EVM directory.
  static const InstructionTable& evm() {
    static const InstructionTable table(kEvmInstructions);
    return table;
  }

  std::span<const InstructionSpec> entries() const noexcept { return entries_; }
  std::size_t vocab_size() const noexcept { return token_names_.size(); }

  /// Token emitted for an opcode byte; INVALID for undefined bytes.
  TokenId token_for_byte(std::uint8_t byte) const noexcept { return by_byte_[byte]; }

  /// Instruction behind a token, or nullptr for PAD. INVALID resolves to 0xFE.
  const InstructionSpec* spec(TokenId id) const {
    check_id(id);
    const int entry = token_entry_[static_cast<std::size_t>(id)];
    return entry < 0 ? nullptr : &entries_[static_cast<std::size_t>(entry)];
  }

  std::string_view mnemonic(TokenId id) const {
    check_id(id);
    return token_names_[static_cast<std::size_t>(id)];
  }

  /// Accepts the legacy spellings SHA3, DIFFICULTY and SUICIDE.
  TokenId token_id(std::string_view mnemonic) const {
    if (auto it = by_name_.find(std::string(mnemonic)); it != by_name_.end()) {
      return it->second;
    }
    if (mnemonic == "SHA3") return token_id("KECCAK256");
    if (mnemonic == "DIFFICULTY") return token_id("PREVRANDAO");
    if (mnemonic == "SUICIDE") return token_id("SELFDESTRUCT");
    throw Error(ErrorCode::kUnknownMnemonic, "unknown mnemonic '" + std::string(mnemonic) + "'");
  }

  bool is_valid_token(TokenId id) const noexcept {
    return id >= 0 && static_cast<std::size_t>(id) < token_names_.size();
  }

 private:
  void check_id(TokenId id) const {
    if (!is_valid_token(id)) {
      throw Error(ErrorCode::kIndexOutOfRange, "token id " + std::to_string(id) + " outside vocabulary");
    }
  }

  std::vector<InstructionSpec> entries_;
  std::array<TokenId, 256> by_byte_{};
  std::vector<int> token_entry_;
  std::vector<std::string_view> token_names_;
  std::unordered_map<std::string, TokenId> by_name_;
};

struct OpcodeSequence {
  std::vector<TokenId> tokens;
  std::vector<std::string_view> mnemonics;
  std::size_t raw_len = 0;

  friend bool operator==(const OpcodeSequence& a, const OpcodeSequence& b) {
    return a.tokens == b.tokens && a.raw_len == b.raw_len;
  }
};

/// Decodes hex text. Whitespace anywhere is ignored, as is a leading "0x".
inline std::vector<std::uint8_t> parse_hex(std::string_view text) {
  auto nibble = [](char ch) -> int {
    if (ch >= '0' && ch <= '9') return ch - '0';
    if (ch >= 'a' && ch <= 'f') return ch - 'a' + 10;
    if (ch >= 'A' && ch <= 'F') return ch - 'A' + 10;
    return -1;
  };
  auto is_space = [](char ch) {
    return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '\f' || ch == '\v';
  };

  std::size_t pos = 0;
  while (pos < text.size() && is_space(text[pos])) ++pos;
  if (text.size() - pos >= 2 && text[pos] == '0' && (text[pos + 1] == 'x' || text[pos + 1] == 'X')) {
    pos += 2;
  }

  std::vector<std::uint8_t> bytes;
  bytes.reserve((text.size() - pos) / 2);
  int high = -1;
  for (; pos < text.size(); ++pos) {
    const char ch = text[pos];
    if (is_space(ch)) continue;
    const int value = nibble(ch);
    if (value < 0) {
      throw Error(ErrorCode::kNonHexCharacter,
                  "non-hex character '" + std::string(1, ch) + "' at offset " + std::to_string(pos), pos);
    }
    if (high < 0) {
      high = value;
    } else {
      bytes.push_back(static_cast<std::uint8_t>((high << 4) | value));
      high = -1;
    }
  }
  if (high >= 0) {
    throw Error(ErrorCode::kOddHexLength, "odd number of hex digits");
  }
  return bytes;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

/// Linear sweep. PUSH operands are skipped; undefined bytes become INVALID; a
/// PUSH whose operand runs past the end is emitted and ends the scan.
inline OpcodeSequence disassemble(std::span<const std::uint8_t> code,
                                  const InstructionTable& table = InstructionTable::evm()) {
  OpcodeSequence out;
  out.tokens.reserve(code.size());
  out.mnemonics.reserve(code.size());
  std::size_t pc = 0;
  while (pc < code.size()) {
    const TokenId id = table.token_for_byte(code[pc]);
    out.tokens.push_back(id);
    out.mnemonics.push_back(table.mnemonic(id));
    const InstructionSpec* spec = table.spec(id);
    pc += 1 + (spec != nullptr ? spec->immediate_len : 0);
  }
  out.raw_len = out.tokens.size();
  return out;
}

inline std::vector<TokenId> to_token_ids(std::span<const std::string_view> mnemonics,
                                         const InstructionTable& table = InstructionTable::evm()) {
  std::vector<TokenId> ids;
  ids.reserve(mnemonics.size());
  for (std::string_view m : mnemonics) ids.push_back(table.token_id(m));
  return ids;
}

inline std::vector<TokenId> to_token_ids(std::span<const std::string> mnemonics,
                                         const InstructionTable& table = InstructionTable::evm()) {
  std::vector<TokenId> ids;
  ids.reserve(mnemonics.size());
  for (const std::string& m : mnemonics) ids.push_back(table.token_id(m));
  return ids;
}

/// Inverse of `disassemble` up to operand values: PUSH operands are filled
/// from `rng`, INVALID becomes 0xFE.
template <class Rng>
std::vector<std::uint8_t> assemble(std::span<const TokenId> tokens, Rng& rng,
                                   const InstructionTable& table = InstructionTable::evm()) {
  std::uniform_int_distribution<int> byte_dist(0, 255);
  std::vector<std::uint8_t> code;
  code.reserve(tokens.size() * 2);
  for (TokenId id : tokens) {
    if (id == kPadToken) {
      throw Error(ErrorCode::kInvalidArgument, "cannot assemble PAD token");
    }
    if (id == kInvalidToken) {
      code.push_back(0xFE);
      continue;
    }
    const InstructionSpec* spec = table.spec(id);
    code.push_back(spec->opcode);
    for (int i = 0; i < spec->immediate_len; ++i) {
      code.push_back(static_cast<std::uint8_t>(byte_dist(rng)));
    }
  }
  return code;
}

}  // namespace opseq
