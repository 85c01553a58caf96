#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "a2t/attention.hpp"
#include "a2t/image.hpp"

namespace a2t {

struct Token {
  int id = 0;
  std::string surface;
  bool operator==(const Token&) const = default;
};

using Tokens = std::vector<Token>;

struct TokenProb {
  Token token;
  double prob = 0.0;
};

/// Prefix of a next-token distribution, most probable first.
struct TokenDist {
  std::vector<TokenProb> entries;
};

/// Causal language model. Implementations must be safe to call concurrently.
class LanguageModelBackend {
 public:
  virtual ~LanguageModelBackend() = default;

  virtual Tokens tokenize(const std::string& text) const = 0;
  virtual std::string detokenize(const Tokens& tokens) const = 0;
  /// Deterministic; at most top_k entries.
  virtual TokenDist next_dist(const Tokens& context, int top_k) const = 0;
  /// Samples from the top-p nucleus until a token containing "." (inclusive),
  /// end-of-sequence (exclusive) or max_len tokens.
  virtual Tokens continue_sentence(const Tokens& context, double top_p, int max_len,
                                   std::uint64_t seed) const = 0;
  /// Token id that ends generation, or -1 if the model has none.
  virtual int eos_id() const = 0;
};

/// Image-text matching in a joint embedding space.
class MatcherBackend {
 public:
  virtual ~MatcherBackend() = default;
  /// Cosine similarity of the image against each sentence, each in [-1, 1].
  virtual std::vector<double> cosine_scores(const Image& image, const std::vector<std::string>& sentences) const = 0;
};

struct VqaOutput {
  std::string answer;
  AttentionStack stack;
};

class VqaBackend {
 public:
  virtual ~VqaBackend() = default;
  virtual VqaOutput infer(const Image& image, const std::string& question) const = 0;
};

}  // namespace a2t
