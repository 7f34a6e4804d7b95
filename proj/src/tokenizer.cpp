#include "vlarl/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "vlarl/error.hpp"

namespace vlarl {

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  std::set<std::string> unique(words.begin(), words.end());
  ids_.emplace(kPadWord, kPad);
  ids_.emplace(kEndWord, kEnd);
  std::int32_t next = 2;
  for (const auto& w : unique) {
    if (w.empty() || w == kPadWord || w == kEndWord) continue;
    if (w.find_first_of(" \t\n") != std::string::npos) {
      throw invalid_argument("vocabulary word contains whitespace: '" + w + "'");
    }
    ids_.emplace(w, next++);
  }
  action_base_ = next;
}

std::int32_t Vocabulary::word_id(std::string_view word) const {
  auto it = ids_.find(word);
  if (it == ids_.end()) throw invalid_argument("unknown word '" + std::string(word) + "'");
  return it->second;
}

bool Vocabulary::contains(std::string_view word) const { return ids_.find(word) != ids_.end(); }

std::string Vocabulary::to_tsv() const {
  std::string out;
  for (const auto& [w, id] : ids_) out += w + "\t" + std::to_string(id) + "\n";
  return out;
}

Vocabulary Vocabulary::from_tsv(std::string_view text) {
  std::vector<std::pair<std::string, std::int32_t>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw io_error("vocabulary line without tab: '" + line + "'");
    std::int32_t id = 0;
    const auto* first = line.data() + tab + 1;
    auto [ptr, ec] = std::from_chars(first, line.data() + line.size(), id);
    if (ec != std::errc{}) throw io_error("vocabulary id is not an integer: '" + line + "'");
    rows.emplace_back(line.substr(0, tab), id);
  }
  std::vector<std::string> words;
  for (const auto& [w, _] : rows) words.push_back(w);
  Vocabulary v(words);
  for (const auto& [w, id] : rows) {
    if (v.word_id(w) != id) {
      throw io_error("vocabulary id for '" + w + "' is not canonical (" + std::to_string(id) +
                     ")");
    }
  }
  return v;
}

std::int32_t action_bin(double x) {
  if (!std::isfinite(x)) throw invalid_argument("non-finite action component");
  x = std::clamp(x, -1.0, 1.0);
  const auto b = static_cast<std::int32_t>(std::floor((x + 1.0) / 2.0 * kBinsPerDim));
  return std::min(kBinsPerDim - 1, b);
}

double bin_center(std::int32_t bin) { return -1.0 + (bin + 0.5) * kBinWidth; }

ActionBins bins_from_action(const ActionVector& a) {
  ActionBins out{};
  for (std::size_t i = 0; i < kActionDims; ++i) {
    if (!std::isfinite(a[i])) {
      throw invalid_argument("non-finite action component at index " + std::to_string(i));
    }
    out[i] = action_bin(a[i]);
  }
  return out;
}

ActionVector action_from_bins(const ActionBins& bins) {
  ActionVector out{};
  for (std::size_t i = 0; i < kActionDims; ++i) {
    if (bins[i] < 0 || bins[i] >= kBinsPerDim) {
      throw invalid_argument("bin out of range at position " + std::to_string(i));
    }
    out[i] = bin_center(bins[i]);
  }
  return out;
}

TokenSequence encode_action(const ActionVector& a, const Vocabulary& vocab) {
  return bins_to_tokens(bins_from_action(a), vocab);
}

ActionBins tokens_to_bins(const TokenSequence& tokens, const Vocabulary& vocab) {
  if (tokens.size() != kActionDims) {
    throw invalid_argument("expected " + std::to_string(kActionDims) + " action tokens, got " +
                           std::to_string(tokens.size()));
  }
  ActionBins bins{};
  for (std::size_t i = 0; i < kActionDims; ++i) {
    const std::int32_t b = tokens[i] - vocab.action_token_base();
    if (b < 0 || b >= kBinsPerDim) {
      throw invalid_argument("token " + std::to_string(tokens[i]) +
                             " outside the action range at position " + std::to_string(i));
    }
    bins[i] = b;
  }
  return bins;
}

TokenSequence bins_to_tokens(const ActionBins& bins, const Vocabulary& vocab) {
  TokenSequence out(kActionDims);
  for (std::size_t i = 0; i < kActionDims; ++i) out[i] = vocab.action_token_base() + bins[i];
  return out;
}

ActionVector decode_tokens(const TokenSequence& tokens, const Vocabulary& vocab) {
  return action_from_bins(tokens_to_bins(tokens, vocab));
}

TokenSequence tokenize_instruction(std::string_view text, const Vocabulary& vocab,
                                   std::size_t length) {
  TokenSequence out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    const std::int32_t id = vocab.word_id(word);
    if (out.size() < length) out.push_back(id);
  }
  out.resize(length, Vocabulary::kPad);
  return out;
}

}  // namespace vlarl
