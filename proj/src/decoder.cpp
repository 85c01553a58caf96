#include "a2t/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "a2t/errors.hpp"
#include "a2t/rollout.hpp"

namespace a2t {

using nlohmann::json;

void GuidingConfig::validate() const {
  if (k < 1) throw InvalidInput("k must be >= 1");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidInput("top_p must lie in (0, 1]");
  if (!(kappa > 0.0)) throw InvalidInput("kappa must be positive");
  if (!(beta >= 0.0)) throw InvalidInput("beta must be nonnegative");
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in [0, 1]");
  if (max_tokens < 1) throw InvalidInput("max_tokens must be >= 1");
  if (max_continuation_tokens < 1) throw InvalidInput("max_continuation_tokens must be >= 1");
  if (workers < 1) throw InvalidInput("workers must be >= 1");
}

std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::eos: return "eos";
    case StopReason::period: return "period";
    case StopReason::max_tokens: return "max_tokens";
  }
  return "?";
}

namespace {

bool has_period(const Token& t) { return t.surface.find('.') != std::string::npos; }

json token_json(const Token& t) { return json::array({t.id, t.surface}); }

// Runs `fn` on the candidate index with a diagnostic naming the failed stage.
template <typename Fn>
auto stage(const char* name, int step, Fn&& fn) {
  try {
    return fn();
  } catch (...) {
    std::throw_with_nested(Error(std::string(name) + " failed at step " + std::to_string(step)));
  }
}

}  // namespace

json to_json(const TranslationResult& r) {
  auto step_json = [](const DecodeStep& s) {
    json cands = json::array();
    for (const Candidate& c : s.candidates) {
      json cont = json::array();
      for (const Token& t : c.continuation) cont.push_back(token_json(t));
      cands.push_back({{"token", token_json(c.token)},
                       {"lm_prob", c.lm_prob},
                       {"continuation", std::move(cont)},
                       {"sentence", c.sentence},
                       {"truncated", c.truncated},
                       {"cosine", c.cosine},
                       {"match_score", c.match_score},
                       {"combined", c.combined}});
    }
    return json{{"chosen", s.chosen}, {"candidates", std::move(cands)}};
  };
  json steps = json::array();
  for (const DecodeStep& s : r.steps) steps.push_back(step_json(s));
  json tokens = json::array();
  for (const Token& t : r.tokens) tokens.push_back(token_json(t));
  json doc = {{"text", r.text},
          {"tokens", std::move(tokens)},
          {"stop_reason", to_string(r.stop_reason)},
          {"prompt", r.prompt},
          {"answer", r.answer},
          {"answer_source", r.answer_from_ground_truth ? "ground_truth" : "vqa"},
          {"mask_coverage", r.mask_coverage},
          {"steps", std::move(steps)}};
  if (r.eos_step) doc["eos_step"] = step_json(*r.eos_step);
  return doc;
}

std::uint64_t continuation_seed(std::uint64_t seed, int step, int candidate) {
  // splitmix64 finalizer over each component in turn
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ static_cast<std::uint64_t>(step)) ^ static_cast<std::uint64_t>(candidate));
}

std::vector<TokenProb> propose(const LanguageModelBackend& lm, const Tokens& context, int k) {
  if (k < 1) throw InvalidInput("propose: k must be >= 1");
  std::vector<TokenProb> top = lm.next_dist(context, k).entries;
  if (static_cast<int>(top.size()) > k) top.resize(k);
  return top;
}

Candidate complete(const LanguageModelBackend& lm, const Tokens& context, const Tokens& generated,
                   const TokenProb& candidate, const GuidingConfig& cfg, std::uint64_t seed) {
  Candidate c;
  c.token = candidate.token;
  c.lm_prob = candidate.prob;
  const bool ends_here = has_period(candidate.token) || candidate.token.id == lm.eos_id();
  if (!ends_here) {
    Tokens ctx = context;
    ctx.push_back(candidate.token);
    c.continuation = lm.continue_sentence(ctx, cfg.top_p, cfg.max_continuation_tokens, seed);
    c.truncated = static_cast<int>(c.continuation.size()) >= cfg.max_continuation_tokens &&
                  !(c.continuation.empty() || has_period(c.continuation.back()));
  }
  Tokens sentence = generated;
  sentence.push_back(candidate.token);
  sentence.insert(sentence.end(), c.continuation.begin(), c.continuation.end());
  c.sentence = lm.detokenize(sentence);
  return c;
}

std::vector<double> softmax_scaled(const std::vector<double>& cosines, double kappa) {
  std::vector<double> f(cosines.size());
  if (f.empty()) return f;
  const double hi = *std::max_element(cosines.begin(), cosines.end());
  double total = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = std::exp(kappa * (cosines[i] - hi));
    total += f[i];
  }
  for (double& v : f) v /= total;
  return f;
}

std::vector<double> match_quality(const MatcherBackend& matcher, const Image& masked_image,
                                  const std::vector<std::string>& sentences, double kappa) {
  if (sentences.empty()) throw InvalidInput("match_quality: no candidate sentences");
  const std::vector<double> cos = matcher.cosine_scores(masked_image, sentences);
  if (cos.size() != sentences.size()) throw InvalidInput("matcher returned a score count that differs from k");
  return softmax_scaled(cos, kappa);
}

std::size_t select(const std::vector<double>& lm_probs, const std::vector<double>& f, double beta) {
  if (lm_probs.size() != f.size()) throw InvalidInput("select: lm_probs and f differ in length");
  if (lm_probs.empty()) throw InvalidInput("select: no candidates");
  std::size_t best = 0;
  double best_score = lm_probs[0] + beta * f[0];
  for (std::size_t i = 1; i < lm_probs.size(); ++i) {
    const double s = lm_probs[i] + beta * f[i];
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

GuidanceInput prepare_guidance(const Image& image, const std::string& question, const VqaBackend& vqa, double tau) {
  VqaOutput out = stage("vqa.infer", 0, [&] { return vqa.infer(image, question); });
  return stage("attention masking", 0, [&] {
    validate(out.stack);
    const SaliencyMap s = saliency(rollout(out.stack), out.stack);
    const BinaryMask mask = threshold_mask(s, tau, image.width, image.height);
    return GuidanceInput{out.answer, apply_mask(image, mask), mask.coverage()};
  });
}

TranslationResult decode(const LanguageModelBackend& lm, const MatcherBackend& matcher, const Image& masked_image,
                         const std::string& prompt, const GuidingConfig& cfg) {
  cfg.validate();
  TranslationResult result;
  result.prompt = prompt;
  const Tokens prompt_tokens = stage("lm.tokenize", 0, [&] { return lm.tokenize(prompt); });
  Tokens context = prompt_tokens;

  for (int step = 0;; ++step) {
    if (step >= cfg.max_tokens) {
      result.stop_reason = StopReason::max_tokens;
      break;
    }
    const std::vector<TokenProb> top = stage("propose", step, [&] { return propose(lm, context, cfg.k); });
    if (top.empty()) throw Error("propose returned no candidates at step " + std::to_string(step));

    DecodeStep record;
    record.candidates.resize(top.size());
    auto complete_one = [&](std::size_t i) {
      record.candidates[i] = complete(lm, context, result.tokens, top[i], cfg,
                                      continuation_seed(cfg.seed, step, static_cast<int>(i)));
    };
    stage("complete", step, [&] {
      if (cfg.workers <= 1 || top.size() == 1) {
        for (std::size_t i = 0; i < top.size(); ++i) complete_one(i);
        return 0;
      }
      // Each worker writes its own slots; merge order is the candidate index.
      const std::size_t n_workers = std::min<std::size_t>(cfg.workers, top.size());
      std::vector<std::exception_ptr> errors(n_workers);
      {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w)
          pool.emplace_back([&, w] {
            try {
              for (std::size_t i = w; i < top.size(); i += n_workers) complete_one(i);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
      return 0;
    });

    std::vector<std::string> sentences;
    std::vector<double> lm_probs;
    for (const Candidate& c : record.candidates) {
      sentences.push_back(c.sentence);
      lm_probs.push_back(c.lm_prob);
    }
    if (cfg.renormalize_topk) {
      double total = 0.0;
      for (double p : lm_probs) total += p;
      if (total > 0.0)
        for (double& p : lm_probs) p /= total;
    }
    const std::vector<double> cos =
        stage("match.scores", step, [&] { return matcher.cosine_scores(masked_image, sentences); });
    if (cos.size() != sentences.size())
      throw Error("match.scores returned " + std::to_string(cos.size()) + " scores for " +
                  std::to_string(sentences.size()) + " sentences at step " + std::to_string(step));
    const std::vector<double> f = softmax_scaled(cos, cfg.kappa);
    const std::size_t chosen = select(lm_probs, f, cfg.beta);
    for (std::size_t i = 0; i < record.candidates.size(); ++i) {
      record.candidates[i].cosine = cos[i];
      record.candidates[i].match_score = f[i];
      record.candidates[i].combined = lm_probs[i] + cfg.beta * f[i];
    }
    record.chosen = static_cast<int>(chosen);
    const Token token = record.candidates[chosen].token;
    if (token.id == lm.eos_id()) {
      result.eos_step = std::move(record);
      result.stop_reason = StopReason::eos;
      break;
    }
    result.steps.push_back(std::move(record));
    result.tokens.push_back(token);
    context.push_back(token);
    if (has_period(token)) {
      result.stop_reason = StopReason::period;
      break;
    }
  }
  result.text = lm.detokenize(result.tokens);
  return result;
}

TranslationResult translate(const Image& image, const std::string& question, const LanguageModelBackend& lm,
                            const MatcherBackend& matcher, const VqaBackend& vqa, const GuidingConfig& cfg,
                            const PromptSpec& prompt, const std::optional<std::string>& ground_truth_answer) {
  cfg.validate();
  GuidanceInput guidance = prepare_guidance(image, question, vqa, cfg.tau);
  const std::string& answer = ground_truth_answer ? *ground_truth_answer : guidance.answer;
  TranslationResult result = decode(lm, matcher, guidance.masked, prompt.build(question, answer), cfg);
  result.answer = answer;
  result.answer_from_ground_truth = ground_truth_answer.has_value();
  result.mask_coverage = guidance.mask_coverage;
  return result;
}

Tokens greedy_decode(const LanguageModelBackend& lm, const std::string& prompt, int k, int max_tokens) {
  Tokens context = lm.tokenize(prompt);
  Tokens out;
  while (static_cast<int>(out.size()) < max_tokens) {
    const std::vector<TokenProb> top = propose(lm, context, k);
    if (top.empty()) break;
    const Token& t = top.front().token;
    if (t.id == lm.eos_id()) break;
    out.push_back(t);
    context.push_back(t);
    if (has_period(t)) break;
  }
  return out;
}

}  // namespace a2t
