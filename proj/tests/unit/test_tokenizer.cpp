#include <gtest/gtest.h>

#include <cmath>

#include "vlarl/error.hpp"
#include "vlarl/rng.hpp"
#include "vlarl/tokenizer.hpp"

using namespace vlarl;

TEST(Tokenizer, BinEdges) {
  EXPECT_EQ(action_bin(-1.0), 0);
  EXPECT_EQ(action_bin(-5.0), 0);
  EXPECT_EQ(action_bin(1.0), 255);
  EXPECT_EQ(action_bin(7.0), 255);
  EXPECT_EQ(action_bin(0.0), 128);
  EXPECT_EQ(action_bin(-1e-12), 127);
  EXPECT_DOUBLE_EQ(bin_center(0), -1.0 + 1.0 / 256.0);
  EXPECT_DOUBLE_EQ(bin_center(255), 1.0 - 1.0 / 256.0);
}

TEST(Tokenizer, RoundTripWithinHalfBin) {
  const Vocabulary vocab({"pick", "red", "cube"});
  CounterRng rng(42);
  for (int i = 0; i < 20000; ++i) {
    ActionVector a;
    for (double& x : a) x = rng.uniform(-1.0, 1.0);
    const TokenSequence toks = encode_action(a, vocab);
    ASSERT_EQ(toks.size(), kActionDims);
    for (auto t : toks) {
      EXPECT_GE(t, vocab.action_token_base());
      EXPECT_LT(t, vocab.size());
    }
    const ActionVector back = decode_tokens(toks, vocab);
    for (std::size_t d = 0; d < kActionDims; ++d)
      EXPECT_LE(std::abs(back[d] - a[d]), kBinWidth / 2 + 1e-12);
    EXPECT_EQ(tokens_to_bins(toks, vocab), bins_from_action(a));
    EXPECT_EQ(bins_to_tokens(bins_from_action(a), vocab), toks);
  }
}

TEST(Tokenizer, BinCentersAreFixedPoints) {
  for (std::int32_t b = 0; b < kBinsPerDim; ++b) EXPECT_EQ(action_bin(bin_center(b)), b);
}

TEST(Tokenizer, RejectsNonActionTokens) {
  const Vocabulary vocab({"a"});
  TokenSequence toks(kActionDims, vocab.action_token_base());
  toks[3] = Vocabulary::kEnd;
  EXPECT_THROW(decode_tokens(toks, vocab), Error);
  EXPECT_THROW(decode_tokens(TokenSequence(3, vocab.action_token_base()), vocab), Error);
}

TEST(Vocabulary, LayoutAndTsvRoundTrip) {
  const Vocabulary vocab({"the", "red", "cube", "red"});
  EXPECT_EQ(vocab.word_id(Vocabulary::kPadWord), 0);
  EXPECT_EQ(vocab.word_id(Vocabulary::kEndWord), 1);
  EXPECT_EQ(vocab.instruction_size(), 5);
  EXPECT_EQ(vocab.size(), 5 + kBinsPerDim);
  EXPECT_LT(vocab.word_id("cube"), vocab.word_id("red"));
  EXPECT_EQ(Vocabulary::from_tsv(vocab.to_tsv()), vocab);
  EXPECT_THROW(vocab.word_id("blue"), Error);
}

TEST(Vocabulary, InstructionPaddingAndTruncation) {
  const Vocabulary vocab({"pick", "the", "cube"});
  const auto t = tokenize_instruction("pick  the cube", vocab, 5);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t[0], vocab.word_id("pick"));
  EXPECT_EQ(t[2], vocab.word_id("cube"));
  EXPECT_EQ(t[4], Vocabulary::kPad);
  EXPECT_EQ(tokenize_instruction("pick the cube", vocab, 2).size(), 2u);
  EXPECT_THROW(tokenize_instruction("pick a cube", vocab, 5), Error);
}
