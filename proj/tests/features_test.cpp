#include "aggro/features.hpp"
#include "aggro/text.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

namespace aggro {
namespace {

using testing::synthetic_corpus;
using testing::TempDir;

const std::filesystem::path kData = AGGRO_TEST_DATA_DIR;

Corpus one_comment(const std::string& text) {
  return Corpus({{"x", text, Label::NAG, Language::en, Provenance::raw, std::nullopt}}, Split::training,
                Language::en);
}

void expect_mask_consistent(const TokenizedBatch& b) {
  ASSERT_EQ(b.token_ids.size(), b.rows * b.max_len);
  ASSERT_EQ(b.attention_mask.size(), b.rows * b.max_len);
  ASSERT_EQ(b.lengths.size(), b.rows);
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t j = 0; j < b.max_len; ++j) ASSERT_EQ(b.mask(i, j), j < b.lengths[i]) << i << "," << j;
}

TEST(WordTokenize, SplitsWhitespaceAndDropsPunctuation) {
  EXPECT_EQ(word_tokenize("Hello, WORLD!! it's\tfine"),
            (std::vector<std::string>{"hello", "world", "it", "s", "fine"}));
  EXPECT_TRUE(word_tokenize("  ...  ").empty());
}

TEST(WordTokenize, LowercasesLatinOnly) {
  EXPECT_EQ(word_tokenize("ÉCOLE Ωmega"), (std::vector<std::string>{"école", "Ωmega"}));
  EXPECT_EQ(word_tokenize("বাড়ি ফিরে যাও।"), (std::vector<std::string>{"বাড়ি", "ফিরে", "যাও"}));
  EXPECT_EQ(word_tokenize("बराबर, अधिकार"), (std::vector<std::string>{"बराबर", "अधिकार"}));
}

TEST(FitVocabulary, HandCountedExample) {
  const Vocabulary v = fit_vocabulary(one_comment("a a b"), 10, 1);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id_of("a"), 2);
  EXPECT_EQ(v.id_of("b"), 3);
  EXPECT_EQ(v.word_of(Vocabulary::kPad), Vocabulary::kPadToken);
  EXPECT_EQ(v.word_of(Vocabulary::kUnk), Vocabulary::kUnkToken);
}

TEST(FitVocabulary, CapacityThreeKeepsOneWord) {
  const Vocabulary v = fit_vocabulary(synthetic_corpus(5, 5, 5), 3, 1);
  EXPECT_EQ(v.size(), 3u);
}

TEST(FitVocabulary, TiesBrokenByFirstOccurrence) {
  const Vocabulary v = fit_vocabulary(one_comment("z y x y z w"), 4, 1);
  // z and y both occur twice; z comes first
  EXPECT_EQ(v.words(), (std::vector<std::string>{"<pad>", "<unk>", "z", "y"}));
}

TEST(FitVocabulary, MinFrequencyFilters) {
  const Vocabulary v = fit_vocabulary(one_comment("a a b c c c"), 10, 2);
  EXPECT_EQ(v.words(), (std::vector<std::string>{"<pad>", "<unk>", "c", "a"}));
}

TEST(FitVocabulary, Errors) {
  EXPECT_THROW(fit_vocabulary(one_comment("a"), 2, 1), InputError);
  EXPECT_THROW(fit_vocabulary(Corpus{}, 10, 1), InputError);
}

TEST(FitVocabulary, Deterministic) {
  const Corpus c = synthetic_corpus(30, 20, 10);
  EXPECT_EQ(fit_vocabulary(c, 8, 1), fit_vocabulary(c, 8, 1));
}

TEST(FitVocabulary, MatchesBruteForceTopK) {
  std::mt19937_64 gen(5);
  const char* pool[] = {"p", "q", "r", "s", "t", "u", "v", "w"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t n = 1 + gen() % 40;
    for (std::size_t i = 0; i < n; ++i) text += std::string(pool[gen() % 8]) + " ";
    const std::size_t max_size = 3 + gen() % 8, min_freq = 1 + gen() % 3;
    const Vocabulary v = fit_vocabulary(one_comment(text), max_size, min_freq);
    // oracle: count, order by (-count, first index), filter, take
    std::vector<std::string> toks = split_whitespace(text);
    std::vector<std::pair<std::string, std::size_t>> seen;
    for (const auto& t : toks) {
      auto it = std::find_if(seen.begin(), seen.end(), [&](auto& p) { return p.first == t; });
      if (it == seen.end()) {
        seen.emplace_back(t, 1);
      } else {
        ++it->second;
      }
    }
    std::vector<std::string> expect{"<pad>", "<unk>"};
    for (std::size_t c = n; c >= 1 && expect.size() < max_size; --c)
      for (const auto& [w, k] : seen)
        if (k == c && k >= min_freq && expect.size() < max_size) expect.push_back(w);
    ASSERT_EQ(v.words(), expect) << text;
  }
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  TempDir dir;
  const Vocabulary v = fit_vocabulary(one_comment("বাড়ি ফিরে ফিরে \"quoted\" tab\tsep"), 50, 1);
  v.save(dir / "vocab.tsv");
  const Vocabulary back = Vocabulary::load(dir / "vocab.tsv");
  EXPECT_EQ(back, v);
  EXPECT_EQ(back.fingerprint(), v.fingerprint());
}

TEST(Vocabulary, LoadRejectsGaps) {
  TempDir dir;
  testing::write_file(dir / "v.tsv", "a\t2\nb\t4\n");
  EXPECT_THROW(Vocabulary::load(dir / "v.tsv"), InputError);
}

TEST(EncodeWordIndex, HandEncoding) {
  const Vocabulary v = fit_vocabulary(one_comment("a a b"), 10, 1);
  const auto b = encode_word_index({"a b unseen"}, v, 5);
  EXPECT_EQ(b.token_ids, (std::vector<std::int32_t>{2, 3, 1, 0, 0}));
  EXPECT_EQ(b.attention_mask, (std::vector<std::uint8_t>{1, 1, 1, 0, 0}));
  EXPECT_EQ(b.lengths[0], 3u);
  EXPECT_EQ(b.scheme, EncodingScheme::word_index);
}

TEST(EncodeWordIndex, EmptyTextIsAllPad) {
  const Vocabulary v = fit_vocabulary(one_comment("a a b"), 10, 1);
  const auto b = encode_word_index({""}, v, 4);
  EXPECT_EQ(b.token_ids, (std::vector<std::int32_t>(4, 0)));
  EXPECT_EQ(b.lengths[0], 0u);
}

TEST(EncodeWordIndex, ExactLengthAndTailTruncation) {
  const Vocabulary v = fit_vocabulary(one_comment("a b c d"), 10, 1);
  auto b = encode_word_index({"a b c", "a b c d a b"}, v, 3);
  EXPECT_EQ(b.row(0), (std::vector<std::int32_t>{2, 3, 4}));
  EXPECT_EQ(b.lengths[0], 3u);
  EXPECT_EQ(b.row(1), (std::vector<std::int32_t>{2, 3, 4}));
  EXPECT_THROW(encode_word_index({"a"}, v, 0), InputError);
}

TEST(EncodeWordIndex, RandomTextsKeepMaskInvariantAndDecode) {
  const Corpus c = synthetic_corpus(40, 40, 40);
  const Vocabulary v = fit_vocabulary(c, 12, 1);
  std::mt19937_64 gen(11);
  std::vector<std::string> texts;
  for (int i = 0; i < 300; ++i) {
    std::string t;
    const std::size_t n = gen() % 15;
    for (std::size_t k = 0; k < n; ++k) t += c[gen() % c.size()].text.substr(0, 1 + gen() % 6) + (gen() % 3 ? " " : ", ");
    texts.push_back(t);
  }
  const std::size_t max_len = 1 + gen() % 10;
  const auto b = encode_word_index(texts, v, max_len);
  expect_mask_consistent(b);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto toks = word_tokenize(texts[i]);
    if (toks.size() > max_len) toks.resize(max_len);
    const auto dec = decode_word_index(b, i, v);
    ASSERT_EQ(dec.size(), toks.size());
    for (std::size_t k = 0; k < toks.size(); ++k) {
      if (v.contains(toks[k])) {
        ASSERT_EQ(dec[k], toks[k]);
      } else {
        ASSERT_EQ(dec[k], Vocabulary::kUnkToken);
      }
    }
  }
  EXPECT_EQ(encode_word_index(texts, v, max_len).token_ids, b.token_ids);
}

TEST(TokenizedBatch, SliceAndSelect) {
  const Vocabulary v = fit_vocabulary(one_comment("a b c"), 10, 1);
  const auto b = encode_word_index({"a", "b b", "c c c"}, v, 4);
  const auto s = b.slice(1, 3);
  EXPECT_EQ(s.rows, 2u);
  EXPECT_EQ(s.row(1), (std::vector<std::int32_t>{4, 4, 4}));
  const auto g = b.select({2, 0});
  EXPECT_EQ(g.row(0), b.row(2));
  EXPECT_EQ(g.row(1), b.row(0));
  expect_mask_consistent(g);
}

struct Reference {
  nlohmann::json j;
  Reference() {
    std::ifstream in(kData / "tokenizer_reference.json");
    j = nlohmann::json::parse(in);
  }
  std::vector<std::string> fixtures() const { return j["fixtures"].get<std::vector<std::string>>(); }
  std::vector<std::vector<std::int32_t>> ids(const std::string& tok, const std::string& key) const {
    return j["tokenizers"][tok][key].get<std::vector<std::vector<std::int32_t>>>();
  }
};

class ReferenceTokenizer : public ::testing::TestWithParam<const char*> {};

TEST_P(ReferenceTokenizer, ContentIdsMatchIdByIdAndMarkersSurviveTruncation) {
  const Reference ref;
  const auto tok = load_tokenizer(kData / "checkpoints" / GetParam());
  const auto fixtures = ref.fixtures();
  const auto expect = ref.ids(GetParam(), "content_ids");
  ASSERT_EQ(fixtures.size(), expect.size());
  for (std::size_t i = 0; i < fixtures.size(); ++i)
    EXPECT_EQ(tok->encode(fixtures[i]), expect[i]) << GetParam() << " fixture " << i << ": " << fixtures[i];

  for (std::size_t max_len : {2u, 3u, 16u, 128u}) {
    const auto b = encode_transformer(fixtures, *tok, max_len);
    expect_mask_consistent(b);
    for (std::size_t i = 0; i < b.rows; ++i) {
      ASSERT_GE(b.lengths[i], 2u);
      EXPECT_EQ(b.id(i, 0), tok->cls_id());
      EXPECT_EQ(b.id(i, b.lengths[i] - 1), tok->sep_id());
      const std::size_t content = std::min(expect[i].size(), max_len - 2);
      EXPECT_EQ(b.lengths[i], content + 2);
      for (std::size_t k = 0; k < content; ++k) EXPECT_EQ(b.id(i, k + 1), expect[i][k]);
      for (std::size_t k = b.lengths[i]; k < max_len; ++k) EXPECT_EQ(b.id(i, k), tok->pad_id());
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Checkpoints, ReferenceTokenizer, ::testing::Values("tiny-bert", "tiny-mbert", "tiny-gpt2"));

TEST(WordPiece, MarkedRowsMatchReferenceWithTruncation) {
  const Reference ref;
  for (const char* name : {"tiny-bert", "tiny-mbert"}) {
    const auto tok = load_tokenizer(kData / "checkpoints" / name);
    const auto b = encode_transformer(ref.fixtures(), *tok, 16);
    const auto expect = ref.ids(name, "with_markers_16");
    for (std::size_t i = 0; i < b.rows; ++i) EXPECT_EQ(b.row(i), expect[i]) << name << " " << i;
  }
}

TEST(WordPiece, CasingFollowsConfig) {
  const auto uncased = load_tokenizer(kData / "checkpoints" / "tiny-bert");
  const auto cased = load_tokenizer(kData / "checkpoints" / "tiny-mbert");
  EXPECT_EQ(uncased->tokenize("YOU"), uncased->tokenize("you"));
  EXPECT_NE(cased->tokenize("YOU"), cased->tokenize("you"));
}

TEST(ByteBpe, DecodeInvertsEncode) {
  const auto tok = load_tokenizer(kData / "checkpoints" / "tiny-gpt2");
  for (const auto& t : Reference().fixtures()) EXPECT_EQ(tok->decode(tok->encode(t)), t);
}

TEST(ByteBpe, PreTokenizerPattern) {
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    for (const auto& w : detail::gpt2_pre_tokenize(unicode::decode_utf8(s))) out.push_back(unicode::encode_utf8(w));
    return out;
  };
  EXPECT_EQ(split("Hello world's  end\n x"),
            (std::vector<std::string>{"Hello", " world", "'s", " ", " end", "\n", " x"}));
  EXPECT_EQ(split("a  "), (std::vector<std::string>{"a", "  "}));
  EXPECT_EQ(split("x?! 42"), (std::vector<std::string>{"x", "?!", " 42"}));
}

TEST(EncodeTransformer, FingerprintMismatchRejected) {
  const auto bert = load_tokenizer(kData / "checkpoints" / "tiny-bert");
  const auto gpt = load_tokenizer(kData / "checkpoints" / "tiny-gpt2");
  EXPECT_NO_THROW(encode_transformer({"hi"}, *bert, 8, bert->fingerprint()));
  EXPECT_THROW(encode_transformer({"hi"}, *bert, 8, gpt->fingerprint()), InputError);
  EXPECT_NE(bert->fingerprint(), load_tokenizer(kData / "checkpoints" / "tiny-mbert")->fingerprint());
  EXPECT_THROW(encode_transformer({"hi"}, *bert, 1), InputError);
}

TEST(EncodeTransformer, RandomTextsAlwaysCarryMarkers) {
  const auto fixtures = Reference().fixtures();
  std::mt19937_64 gen(3);
  for (const char* name : {"tiny-bert", "tiny-mbert", "tiny-gpt2"}) {
    const auto tok = load_tokenizer(kData / "checkpoints" / name);
    std::vector<std::string> texts;
    for (int i = 0; i < 200; ++i) {
      std::string t;
      const std::size_t n = gen() % 6;
      for (std::size_t k = 0; k < n; ++k) t += fixtures[gen() % fixtures.size()] + " ";
      texts.push_back(t);
    }
    const auto b = encode_transformer(texts, *tok, 2 + gen() % 40);
    expect_mask_consistent(b);
    for (std::size_t i = 0; i < b.rows; ++i) {
      EXPECT_EQ(b.id(i, 0), tok->cls_id());
      EXPECT_EQ(b.id(i, b.lengths[i] - 1), tok->sep_id());
    }
  }
}

TEST(LoadTokenizer, MissingFiles) {
  TempDir dir;
  EXPECT_THROW(load_tokenizer(dir.path()), IoError);
}

}  // namespace
}  // namespace aggro
