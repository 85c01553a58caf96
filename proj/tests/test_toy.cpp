#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "a2t/errors.hpp"
#include "a2t/rollout.hpp"
#include "a2t/toy.hpp"

using namespace a2t;
using namespace a2t::toy;

namespace {

const ToyLanguageModel& lm() { return ToyLanguageModel::shipped(); }

Tokens words(const std::string& text) { return lm().tokenize(text); }

ToyScene random_scene(std::mt19937_64& rng, int rows, int cols) {
  const auto& concepts = Palette::shipped().concepts();
  std::vector<std::string> pool = concepts;
  std::shuffle(pool.begin(), pool.end(), rng);
  ToyScene s;
  s.grid.assign(rows, std::vector<std::string>(cols));
  int k = 0;
  for (auto& row : s.grid)
    for (auto& w : row) w = pool[k++];
  return s;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST(ToyLm, TheRowExample) {
  const TokenDist d = lm().next_dist(words("the"), 2);
  ASSERT_EQ(d.entries.size(), 2u);
  EXPECT_EQ(d.entries[0].token.surface, "cat");
  EXPECT_DOUBLE_EQ(d.entries[0].prob, 0.5);
  EXPECT_EQ(d.entries[1].token.surface, "bus");
  EXPECT_DOUBLE_EQ(d.entries[1].prob, 0.3);
}

TEST(ToyLm, LargeTopKReturnsWholeDistribution) {
  EXPECT_EQ(lm().next_dist(words("the"), 100000).entries.size(), 3u);
  // a word without a row backs off to the unigram distribution over every real token
  const Tokens ctx{{ToyLanguageModel::kUnk, "zorblax"}};
  ASSERT_FALSE(lm().has_row(ctx.back().id));
  EXPECT_EQ(lm().next_dist(ctx, 100000).entries.size(), static_cast<std::size_t>(lm().vocab_size() - 2));
}

TEST(ToyLm, Deterministic) {
  const TokenDist a = lm().next_dist(words("there is a"), 45), b = lm().next_dist(words("there is a"), 45);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].token, b.entries[i].token);
    EXPECT_EQ(a.entries[i].prob, b.entries[i].prob);
  }
}

TEST(ToyLm, EveryContextIsADistributionSortedDescending) {
  for (int id = 0; id < lm().vocab_size(); ++id) {
    const Tokens ctx{{id, lm().word(id)}};
    const TokenDist full = lm().next_dist(ctx, lm().vocab_size());
    double total = 0.0;
    for (std::size_t i = 0; i < full.entries.size(); ++i) {
      EXPECT_GT(full.entries[i].prob, 0.0);
      total += full.entries[i].prob;
      if (i > 0) {
        EXPECT_GE(full.entries[i - 1].prob, full.entries[i].prob);
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-6) << lm().word(id);
    // a top-k prefix preserves the global order
    const TokenDist top = lm().next_dist(ctx, 5);
    for (std::size_t i = 0; i < top.entries.size(); ++i) EXPECT_EQ(top.entries[i].token, full.entries[i].token);
  }
}

TEST(ToyLm, EmptyContextUsesBeginMarker) {
  const TokenDist a = lm().next_dist({}, 5);
  const TokenDist b = lm().next_dist({{ToyLanguageModel::kBos, "<s>"}}, 5);
  ASSERT_EQ(a.entries.size(), b.entries.size());
  EXPECT_EQ(a.entries[0].token, b.entries[0].token);
}

TEST(ToyLm, UnknownIdAndBadArgumentsThrow) {
  EXPECT_THROW(lm().next_dist({{lm().vocab_size() + 3, "zz"}}, 3), InvalidInput);
  EXPECT_THROW(lm().next_dist({{-1, "zz"}}, 3), InvalidInput);
  EXPECT_THROW(lm().next_dist(words("the"), 0), InvalidInput);
  EXPECT_THROW(lm().continue_sentence(words("the"), 0.0, 8, 1), InvalidInput);
}

TEST(ToyLm, PeriodFloorInBackoff) {
  const Tokens ctx{{ToyLanguageModel::kUnk, "zorblax"}};
  bool found = false;
  for (const TokenProb& tp : lm().next_dist(ctx, 100000).entries)
    if (tp.token.surface == ".") {
      found = true;
      EXPECT_GE(tp.prob, 0.1 - 1e-12);
    }
  EXPECT_TRUE(found);
}

TEST(ToyLm, TokenizeRoundTrip) {
  for (const std::string text : {"there is a bus.", "the cat is on the road, and it is very big.",
                                 "answer and explain: what is on the left? the answer is bus because"}) {
    const Tokens t = lm().tokenize(text);
    EXPECT_EQ(lm().detokenize(t), text);
    for (const Token& tok : t) EXPECT_NE(tok.id, ToyLanguageModel::kUnk) << tok.surface;
  }
  EXPECT_EQ(lm().tokenize("Zorblax")[0].id, ToyLanguageModel::kUnk);
}

TEST(ToyLm, ParsesTablesAndRejectsBadLines) {
  const ToyLanguageModel small = ToyLanguageModel::from_text("# tiny\nx y 2\nx z 2\ny . 1\n");
  const TokenDist d = small.next_dist({{small.id_of("x"), "x"}}, 5);
  ASSERT_EQ(d.entries.size(), 2u);
  EXPECT_DOUBLE_EQ(d.entries[0].prob, 0.5);
  EXPECT_EQ(d.entries[0].token.surface, "y");  // equal mass: lower id first
  EXPECT_THROW(ToyLanguageModel::from_text("x y\n"), InvalidInput);
  EXPECT_THROW(ToyLanguageModel::from_text("x y -1\n"), InvalidInput);
}

TEST(ToyLm, ContinuationsAreSeededAndReachAPeriod) {
  for (int id = 3; id < lm().vocab_size(); ++id) {
    if (lm().word(id) == ".") continue;  // sentences are never continued past a period
    const Tokens ctx{{id, lm().word(id)}};
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      const Tokens a = lm().continue_sentence(ctx, 0.15, 32, seed);
      EXPECT_EQ(a, lm().continue_sentence(ctx, 0.15, 32, seed));
      ASSERT_FALSE(a.empty()) << lm().word(id);
      EXPECT_NE(a.back().surface.find('.'), std::string::npos) << lm().word(id) << " seed " << seed;
    }
  }
}

TEST(ToyLm, NucleusIsShortestPrefixReachingMass) {
  const std::vector<TokenProb> d{{{1, "a"}, 0.5}, {{2, "b"}, 0.3}, {{3, "c"}, 0.2}};
  EXPECT_EQ(nucleus(d, 0.15).size(), 1u);
  EXPECT_EQ(nucleus(d, 0.5).size(), 1u);
  EXPECT_EQ(nucleus(d, 0.51).size(), 2u);
  EXPECT_EQ(nucleus(d, 1.0).size(), 3u);
}

TEST(Palette, SeededBijection) {
  const Palette& p = Palette::shipped();
  std::set<Rgb> colors;
  for (const std::string& c : p.concepts()) {
    const Rgb rgb = p.color_of(c);
    EXPECT_GE(rgb.r + rgb.g + rgb.b, 96);
    EXPECT_EQ(p.concept_of(rgb), c);
    colors.insert(rgb);
  }
  EXPECT_EQ(colors.size(), p.concepts().size());
  EXPECT_EQ(p.concept_of({0, 0, 0}), "");
  const Palette again(p.concepts(), 0), other(p.concepts(), 1);
  EXPECT_EQ(again.color_of("bus"), p.color_of("bus"));
  EXPECT_NE(other.color_of("bus"), p.color_of("bus"));
  EXPECT_THROW(p.color_of("unicorn"), InvalidInput);
  EXPECT_THROW(Palette({"a", "a"}, 0), InvalidInput);
}

TEST(Scene, RenderDecodeRoundTrip) {
  std::mt19937_64 rng(4);
  const ToyScene s = random_scene(rng, 3, 4);
  const Image img = s.render();
  EXPECT_EQ(img.width, 64);
  EXPECT_EQ(img.height, 48);
  const auto patches = decode_patches(img, Palette::shipped(), 16);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(patches[r * 4 + c], s.grid[r][c]);
  EXPECT_EQ(ToyScene::from_json(s.to_json()).grid, s.grid);
}

TEST(Scene, RejectsBadDocuments) {
  using nlohmann::json;
  EXPECT_THROW(ToyScene::from_json(json::parse(R"({"grid": [["bus"], ["tree", "dog"]]})")), InvalidInput);
  EXPECT_THROW(ToyScene::from_json(json::parse(R"({"grid": [["unicorn"]]})")), InvalidInput);
  EXPECT_THROW(ToyScene::from_json(json::parse(R"({"grid": []})")), InvalidInput);
  EXPECT_THROW(ToyScene::from_json(json::parse(R"({"grid": [["bus"]], "patch_px": 0})")), InvalidInput);
}

TEST(ToyMatcher, HandCosineExample) {
  ToyScene s;
  s.grid = {{"bus", "road"}};
  const auto scores = ToyMatcher().cosine_scores(s.render(), {"a yellow bus", "a green tree", ""});
  EXPECT_NEAR(scores[0], 1.0 / std::sqrt(6.0), 1e-12);
  EXPECT_NEAR(scores[0], 0.4082, 1e-4);
  EXPECT_EQ(scores[1], 0.0);
  EXPECT_EQ(scores[2], 0.0);
}

TEST(ToyMatcher, FullyMaskedImageScoresZero) {
  ToyScene s;
  s.grid = {{"bus", "road"}};
  Image img = s.render();
  std::fill(img.pixels.begin(), img.pixels.end(), 0);
  for (double v : ToyMatcher().cosine_scores(img, {"bus road", "a bus"})) EXPECT_EQ(v, 0.0);
}

TEST(ToyMatcher, AddingAVisibleWordNeverLowersTheScore) {
  std::mt19937_64 rng(8);
  const auto& concepts = Palette::shipped().concepts();
  const std::vector<std::string> filler{"a", "the", "is", "on", "very", "big", "and", "there"};
  for (int trial = 0; trial < 300; ++trial) {
    const ToyScene s = random_scene(rng, 2, 2);
    const Image img = s.render();
    std::string sentence;
    const int n = std::uniform_int_distribution<int>(0, 6)(rng);
    for (int i = 0; i < n; ++i) {
      const bool concept_word = std::uniform_int_distribution<int>(0, 2)(rng) == 0;
      sentence += (concept_word ? concepts[rng() % concepts.size()] : filler[rng() % filler.size()]) + " ";
    }
    const std::string visible = s.grid[rng() % 2][rng() % 2];
    const auto sc = ToyMatcher().cosine_scores(img, {sentence, sentence + visible});
    EXPECT_GE(sc[1], sc[0]) << sentence << "+" << visible;
  }
}

TEST(ToyMatcher, VisibleBeatsMaskedInOtherwiseEqualSentences) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    ToyScene s = random_scene(rng, 1, 2);
    const std::string a = s.grid[0][0], b = s.grid[0][1];
    Image img = s.render();
    for (int y = 0; y < 16; ++y)
      for (int x = 16; x < 32; ++x) std::fill(img.at(x, y), img.at(x, y) + 3, 0);
    for (const std::string frame : {"there is a @.", "it is a @ on the road.", "the @ and a cat."}) {
      auto fill = [&](const std::string& w) {
        std::string out = frame;
        out.replace(out.find('@'), 1, w);
        return out;
      };
      const auto sc = ToyMatcher().cosine_scores(img, {fill(a), fill(b)});
      EXPECT_GT(sc[0], sc[1]);
    }
  }
}

TEST(ToyVqa, TopLeftExample) {
  ToyScene s;
  s.grid = {{"bus", "tree"}, {"road", "dog"}};
  const VqaOutput out = ToyVqa().infer(s.render(), "what is on the top left");
  EXPECT_EQ(out.answer, "bus");
  EXPECT_NO_THROW(validate(out.stack));
  const SaliencyMap sal = saliency(rollout(out.stack), out.stack);
  EXPECT_EQ(argmax(sal.values), 0u);
  for (const Matrix& h : *out.stack.layers.back().qi)
    for (int r = 0; r < h.rows(); ++r) EXPECT_GE(h(r, 1), 0.9);  // column 0 is the cls token
}

TEST(ToyVqa, UniformVariantGivesConstantSaliency) {
  ToyScene s;
  s.grid = {{"bus", "tree"}, {"road", "dog"}};
  const VqaOutput out = ToyVqa(Palette::shipped(), 16, true).infer(s.render(), "what is on the bottom right");
  EXPECT_EQ(out.answer, "dog");
  const SaliencyMap sal = saliency(rollout(out.stack), out.stack);
  for (double v : sal.values) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(patch_mask(sal, 200.0 / 256.0), (std::vector<std::uint8_t>{1, 0, 0, 0}));
}

TEST(ToyVqa, Deterministic) {
  ToyScene s;
  s.grid = {{"bus", "tree"}};
  const Image img = s.render();
  EXPECT_EQ(to_json(ToyVqa().infer(img, "what is on the right").stack),
            to_json(ToyVqa().infer(img, "what is on the right").stack));
}

TEST(ToyVqa, MalformedQuestionsAreUnanswerable) {
  ToyScene s;
  s.grid = {{"bus", "tree"}};
  const Image img = s.render();
  EXPECT_THROW(ToyVqa().infer(img, "how big is it"), Unanswerable);
  EXPECT_THROW(ToyVqa().infer(img, "what is on the top"), Unanswerable);  // one row: no vertical axis
  EXPECT_THROW(ToyVqa().infer(img, "what is in row 1 column 3"), Unanswerable);
  Image masked = img;
  std::fill(masked.pixels.begin(), masked.pixels.end(), 0);
  EXPECT_THROW(ToyVqa().infer(masked, "what is on the left"), Unanswerable);
}

TEST(ToyVqa, SaliencyArgmaxIsAnswerPatchOnRandomScenes) {
  std::mt19937_64 rng(100);
  for (int trial = 0; trial < 100; ++trial) {
    const int rows = std::uniform_int_distribution<int>(1, 4)(rng);
    const int cols = std::uniform_int_distribution<int>(rows == 1 ? 2 : 1, 4)(rng);
    const ToyScene s = random_scene(rng, rows, cols);
    const int r = std::uniform_int_distribution<int>(0, rows - 1)(rng);
    const int c = std::uniform_int_distribution<int>(0, cols - 1)(rng);
    const std::string q = position_question(r, c, rows, cols);
    const GridPosition p = parse_position(q, rows, cols);
    ASSERT_EQ(p.row, r) << q;
    ASSERT_EQ(p.col, c) << q;
    const VqaOutput out = ToyVqa().infer(s.render(), q);
    EXPECT_EQ(out.answer, s.grid[r][c]);
    const SaliencyMap sal = saliency(rollout(out.stack), out.stack);
    EXPECT_EQ(argmax(sal.values), static_cast<std::size_t>(r * cols + c)) << q;
    EXPECT_EQ(patch_mask(sal, 200.0 / 256.0)[r * cols + c], 1);
  }
}
