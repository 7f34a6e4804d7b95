#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace vlarl {

inline constexpr std::size_t kActionDims = 7;
inline constexpr int kBinsPerDim = 256;
inline constexpr double kBinWidth = 2.0 / kBinsPerDim;

/// dx, dy, dz, droll, dpitch, dyaw, grip; each in [-1, 1].
using ActionVector = std::array<double, kActionDims>;
using TokenSequence = std::vector<std::int32_t>;
/// Per-dimension bin indices in [0, kBinsPerDim).
using ActionBins = std::array<std::int32_t, kActionDims>;

/// Closed vocabulary: pad and end markers, then instruction words in sorted
/// order, then the action tokens occupying the last kBinsPerDim ids.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kEnd = 1;
  static constexpr const char* kPadWord = "<pad>";
  static constexpr const char* kEndWord = "<end>";

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  explicit Vocabulary(const std::vector<std::string>& words);

  std::int32_t word_id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::map<std::string, std::int32_t, std::less<>>& words() const { return ids_; }

  std::int32_t action_token_base() const noexcept { return action_base_; }
  /// Number of non-action ids (pad, end, words).
  std::int32_t instruction_size() const noexcept { return action_base_; }
  std::int32_t size() const noexcept { return action_base_ + kBinsPerDim; }

  /// One `word<TAB>id` line per entry, sorted by word.
  std::string to_tsv() const;
  static Vocabulary from_tsv(std::string_view text);

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::map<std::string, std::int32_t, std::less<>> ids_;
  std::int32_t action_base_ = 2;
};

/// bin(x) = min(255, floor((x + 1) / 2 * 256)) after clamping to [-1, 1].
std::int32_t action_bin(double x);
/// Center of a bin: -1 + (bin + 0.5) * 2/256.
double bin_center(std::int32_t bin);

ActionBins bins_from_action(const ActionVector& a);
ActionVector action_from_bins(const ActionBins& bins);

TokenSequence encode_action(const ActionVector& a, const Vocabulary& vocab);
ActionVector decode_tokens(const TokenSequence& tokens, const Vocabulary& vocab);
ActionBins tokens_to_bins(const TokenSequence& tokens, const Vocabulary& vocab);
TokenSequence bins_to_tokens(const ActionBins& bins, const Vocabulary& vocab);

/// Whitespace-split word lookup, padded or truncated to `length` ids.
TokenSequence tokenize_instruction(std::string_view text, const Vocabulary& vocab,
                                   std::size_t length);

}  // namespace vlarl
