#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "a2t/backend.hpp"

namespace a2t::toy {

/// Path of a file shipped in the data directory (A2T_DATA_DIR env overrides).
std::string data_path(std::string_view name);

/// Bigram language model read from "prev next prob" triples. Rows are
/// renormalized; a previous token without a row backs off to unigram
/// frequencies, in which "." has a floor of 0.1.
class ToyLanguageModel final : public LanguageModelBackend {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;

  static ToyLanguageModel from_text(std::string_view table);
  static ToyLanguageModel from_file(const std::string& path);
  /// The version-pinned table shipped as data/toy_lm_v1.txt.
  static const ToyLanguageModel& shipped();

  Tokens tokenize(const std::string& text) const override;
  std::string detokenize(const Tokens& tokens) const override;
  TokenDist next_dist(const Tokens& context, int top_k) const override;
  Tokens continue_sentence(const Tokens& context, double top_p, int max_len, std::uint64_t seed) const override;
  int eos_id() const override { return kEos; }

  int vocab_size() const { return static_cast<int>(words_.size()); }
  /// Id of a vocabulary word, kUnk if absent.
  int id_of(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(id); }
  bool has_row(int id) const { return rows_.count(id) != 0; }

 private:
  ToyLanguageModel() = default;
  const std::vector<TokenProb>& full_dist(int prev) const;

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
  std::map<int, std::vector<TokenProb>> rows_;  // sorted, renormalized
  std::vector<TokenProb> unigram_;
};

/// Nucleus of a descending distribution: the shortest prefix whose mass reaches top_p.
std::vector<TokenProb> nucleus(const std::vector<TokenProb>& sorted, double top_p);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
  bool operator<(const Rgb& o) const { return std::tie(r, g, b) < std::tie(o.r, o.g, o.b); }
};

/// Seeded bijection between concept words and flat non-black colors.
class Palette {
 public:
  Palette(std::vector<std::string> concepts, std::uint64_t seed);
  /// Concepts listed in data/concepts.txt, seed 0.
  static const Palette& shipped();

  Rgb color_of(std::string_view concept_word) const;
  /// Empty string for colors that are not in the palette (e.g. masked black).
  std::string concept_of(Rgb color) const;
  bool contains(std::string_view concept_word) const;
  const std::vector<std::string>& concepts() const { return concepts_; }

 private:
  std::vector<std::string> concepts_;
  std::map<std::string, Rgb, std::less<>> colors_;
  std::map<Rgb, std::string> reverse_;
};

/// A grid of concept words; each patch renders as one flat color block.
struct ToyScene {
  std::vector<std::vector<std::string>> grid;
  int patch_px = 16;

  int rows() const { return static_cast<int>(grid.size()); }
  int cols() const { return grid.empty() ? 0 : static_cast<int>(grid.front().size()); }

  Image render(const Palette& palette = Palette::shipped()) const;

  static ToyScene from_json(const nlohmann::json& doc);
  static ToyScene load(const std::string& path);
  nlohmann::json to_json() const;
};

/// Concepts visible per patch block of `image`; "" for blocks whose majority
/// color is not a palette color.
std::vector<std::string> decode_patches(const Image& image, const Palette& palette, int patch_px);

/// Bag-of-words matcher: cosine between the set of visible concepts and the
/// set of sentence words.
class ToyMatcher final : public MatcherBackend {
 public:
  explicit ToyMatcher(const Palette& palette = Palette::shipped(), int patch_px = 16)
      : palette_(palette), patch_px_(patch_px) {}
  std::vector<double> cosine_scores(const Image& image, const std::vector<std::string>& sentences) const override;

 private:
  const Palette& palette_;
  int patch_px_;
};

/// Lowercased alphanumeric words of a sentence.
std::vector<std::string> bag_words(std::string_view text);

/// Answers "what is on the <position>" by decoding the scene from the image,
/// and records a fusion stack whose cross-attention concentrates on the
/// answer patch.
class ToyVqa final : public VqaBackend {
 public:
  explicit ToyVqa(const Palette& palette = Palette::shipped(), int patch_px = 16, bool uniform_attention = false)
      : palette_(palette), patch_px_(patch_px), uniform_(uniform_attention) {}
  VqaOutput infer(const Image& image, const std::string& question) const override;

 private:
  const Palette& palette_;
  int patch_px_;
  bool uniform_;
};

struct GridPosition {
  int row = 0;
  int col = 0;
};

/// Parses "what is on the top left", "... right", "... row 2 column 3" etc.
/// Throws Unanswerable if the question names no position inside the grid.
GridPosition parse_position(std::string_view question, int rows, int cols);
/// Canonical question text for a grid cell, parseable by parse_position.
std::string position_question(int row, int col, int rows, int cols);

/// Attention stack the toy VQA model records for a question about `target`.
AttentionStack build_toy_stack(int q_len, int rows, int cols, GridPosition target, bool uniform);

}  // namespace a2t::toy
