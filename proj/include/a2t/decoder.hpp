#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "a2t/backend.hpp"
#include "a2t/prompt.hpp"

namespace a2t {

struct GuidingConfig {
  int k = 45;                          // candidates per step
  double top_p = 0.15;                 // nucleus for continuations
  double kappa = 100.0;                // guiding temperature
  double beta = 0.7;                   // weight of the matching quality
  double tau = 200.0 / 256.0;          // saliency threshold
  int max_tokens = 64;
  int max_continuation_tokens = 32;
  std::uint64_t seed = 0;
  bool renormalize_topk = false;       // rescale lm_prob over the k candidates
  int workers = 1;                     // concurrent completions per step

  /// Throws InvalidInput for out-of-range values.
  void validate() const;
};

struct Candidate {
  Token token;
  double lm_prob = 0.0;
  Tokens continuation;
  std::string sentence;
  bool truncated = false;   // continuation hit max_continuation_tokens without a period
  double cosine = 0.0;
  double match_score = 0.0; // softmax-normalized matching quality
  double combined = 0.0;
};

struct DecodeStep {
  std::vector<Candidate> candidates;
  int chosen = 0;
};

enum class StopReason { eos, period, max_tokens };
std::string_view to_string(StopReason r);

struct TranslationResult {
  std::string text;
  Tokens tokens;
  std::vector<DecodeStep> steps;  // one per emitted token
  std::optional<DecodeStep> eos_step;  // the step that selected end-of-sequence
  StopReason stop_reason = StopReason::max_tokens;

  std::string prompt;
  std::string answer;
  bool answer_from_ground_truth = false;
  double mask_coverage = 0.0;
};

nlohmann::json to_json(const TranslationResult& r);

/// Mixes (seed, step, candidate) into an independent per-continuation seed.
std::uint64_t continuation_seed(std::uint64_t seed, int step, int candidate);

/// Top-k next tokens with raw (full-vocabulary) probabilities.
std::vector<TokenProb> propose(const LanguageModelBackend& lm, const Tokens& context, int k);

/// Completes `generated + candidate` into a sentence ending at the first ".".
/// `context` is the full language-model context (prompt + generated).
Candidate complete(const LanguageModelBackend& lm, const Tokens& context, const Tokens& generated,
                   const TokenProb& candidate, const GuidingConfig& cfg, std::uint64_t seed);

/// softmax(kappa * cosine) over the candidates.
std::vector<double> softmax_scaled(const std::vector<double>& cosines, double kappa);

std::vector<double> match_quality(const MatcherBackend& matcher, const Image& masked_image,
                                  const std::vector<std::string>& sentences, double kappa);

/// argmax of lm_probs[i] + beta * f[i]; the lowest index wins ties.
std::size_t select(const std::vector<double>& lm_probs, const std::vector<double>& f, double beta);

/// Image after the attention mask plus what produced it.
struct GuidanceInput {
  std::string answer;
  MaskedImage masked;
  double mask_coverage = 0.0;
};

/// VQA forward pass, rollout, thresholding and masking.
GuidanceInput prepare_guidance(const Image& image, const std::string& question, const VqaBackend& vqa, double tau);

/// Guided decoding given a prepared masked image and prompt text.
TranslationResult decode(const LanguageModelBackend& lm, const MatcherBackend& matcher, const Image& masked_image,
                         const std::string& prompt, const GuidingConfig& cfg);

/// The whole pipeline. When `ground_truth_answer` is set it replaces the VQA
/// prediction in the prompt (the mask still comes from the VQA pass).
TranslationResult translate(const Image& image, const std::string& question, const LanguageModelBackend& lm,
                            const MatcherBackend& matcher, const VqaBackend& vqa, const GuidingConfig& cfg,
                            const PromptSpec& prompt = {},
                            const std::optional<std::string>& ground_truth_answer = std::nullopt);

/// Plain greedy decoding over the LM's top-k, the beta = 0 reference.
Tokens greedy_decode(const LanguageModelBackend& lm, const std::string& prompt, int k, int max_tokens);

}  // namespace a2t
