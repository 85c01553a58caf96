#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <random>
#include <sstream>

#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"
#include "a2t/toy.hpp"

namespace a2t::toy {

std::string data_path(std::string_view name) {
  const char* env = std::getenv("A2T_DATA_DIR");
  std::string dir = env && *env ? env : A2T_DATA_DIR;
  return dir + "/" + std::string(name);
}

namespace {

constexpr double kPeriodFloor = 0.1;
constexpr double kUnigramSmoothing = 0.01;

bool is_punct(char c) { return c == '.' || c == ',' || c == '?' || c == ':' || c == ';' || c == '!'; }

bool by_prob_then_id(const TokenProb& a, const TokenProb& b) {
  if (a.prob != b.prob) return a.prob > b.prob;
  return a.token.id < b.token.id;
}

// Uniform double in [0, 1) from the top 53 bits; independent of the
// standard library's distribution implementations.
double canonical(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

std::vector<TokenProb> nucleus(const std::vector<TokenProb>& sorted, double top_p) {
  std::vector<TokenProb> out;
  double mass = 0.0;
  for (const TokenProb& tp : sorted) {
    if (tp.prob <= 0.0) break;
    out.push_back(tp);
    mass += tp.prob;
    if (mass >= top_p) break;
  }
  return out;
}

ToyLanguageModel ToyLanguageModel::from_text(std::string_view table) {
  ToyLanguageModel lm;
  for (const char* special : {"<unk>", "<s>", "<eos>"}) {
    lm.ids_.emplace(special, static_cast<int>(lm.words_.size()));
    lm.words_.emplace_back(special);
  }
  auto intern = [&lm](const std::string& w) {
    auto [it, inserted] = lm.ids_.emplace(w, static_cast<int>(lm.words_.size()));
    if (inserted) lm.words_.push_back(w);
    return it->second;
  };

  std::map<int, std::vector<std::pair<int, double>>> raw;
  std::istringstream in{std::string(table)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string prev, next;
    double prob = -1.0;
    if (!(fields >> prev >> next >> prob) || prob < 0.0)
      throw InvalidInput("toy LM table line " + std::to_string(lineno) + ": expected 'prev next prob'");
    const int p = intern(prev);
    raw[p].emplace_back(intern(next), prob);
  }

  std::vector<double> marginal(lm.words_.size(), 0.0);
  for (const auto& [prev, entries] : raw) {
    double total = 0.0;
    for (const auto& e : entries) total += e.second;
    if (total <= 0.0) throw InvalidInput("toy LM row '" + lm.words_[prev] + "' has no mass");
    std::vector<TokenProb> row;
    for (const auto& [next, prob] : entries) {
      row.push_back({{next, lm.words_[next]}, prob / total});
      marginal[next] += prob / total;
    }
    std::sort(row.begin(), row.end(), by_prob_then_id);
    lm.rows_.emplace(prev, std::move(row));
  }

  // Unigram backoff over every emittable token, with the period floor.
  const int period = lm.id_of(".");
  double total = 0.0;
  for (std::size_t id = 0; id < marginal.size(); ++id) {
    if (static_cast<int>(id) == kUnk || static_cast<int>(id) == kBos) continue;
    marginal[id] += kUnigramSmoothing;
    total += marginal[id];
  }
  std::vector<double> uni(marginal.size(), 0.0);
  for (std::size_t id = 0; id < marginal.size(); ++id)
    if (static_cast<int>(id) != kUnk && static_cast<int>(id) != kBos) uni[id] = marginal[id] / total;
  if (period != kUnk && uni[period] < kPeriodFloor) {
    const double rest = 1.0 - uni[period];
    for (std::size_t id = 0; id < uni.size(); ++id)
      if (static_cast<int>(id) != period) uni[id] *= (1.0 - kPeriodFloor) / rest;
    uni[period] = kPeriodFloor;
  }
  for (std::size_t id = 0; id < uni.size(); ++id)
    if (uni[id] > 0.0) lm.unigram_.push_back({{static_cast<int>(id), lm.words_[id]}, uni[id]});
  std::sort(lm.unigram_.begin(), lm.unigram_.end(), by_prob_then_id);
  return lm;
}

ToyLanguageModel ToyLanguageModel::from_file(const std::string& path) { return from_text(read_file(path)); }

const ToyLanguageModel& ToyLanguageModel::shipped() {
  static const ToyLanguageModel lm = from_file(data_path("toy_lm_v1.txt"));
  return lm;
}

int ToyLanguageModel::id_of(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

Tokens ToyLanguageModel::tokenize(const std::string& text) const {
  Tokens out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    out.push_back({id_of(word), word});
    word.clear();
  };
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(ch)) {
      flush();
      word = std::string(1, ch);
      flush();
    } else {
      word += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return out;
}

std::string ToyLanguageModel::detokenize(const Tokens& tokens) const {
  std::string out;
  for (const Token& t : tokens) {
    if (t.id == kBos || t.id == kEos) continue;
    const bool glue = t.surface.size() == 1 && is_punct(t.surface[0]);
    if (!out.empty() && !glue) out += ' ';
    out += t.surface;
  }
  return out;
}

const std::vector<TokenProb>& ToyLanguageModel::full_dist(int prev) const {
  if (prev < 0 || prev >= vocab_size()) throw InvalidInput("toy LM: unknown token id " + std::to_string(prev));
  auto it = rows_.find(prev);
  return it == rows_.end() ? unigram_ : it->second;
}

TokenDist ToyLanguageModel::next_dist(const Tokens& context, int top_k) const {
  if (top_k < 1) throw InvalidInput("toy LM: top_k must be >= 1");
  const std::vector<TokenProb>& dist = full_dist(context.empty() ? kBos : context.back().id);
  const std::size_t n = std::min(dist.size(), static_cast<std::size_t>(top_k));
  return TokenDist{std::vector<TokenProb>(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(n))};
}

Tokens ToyLanguageModel::continue_sentence(const Tokens& context, double top_p, int max_len,
                                           std::uint64_t seed) const {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidInput("toy LM: top_p must lie in (0, 1]");
  std::mt19937_64 rng(seed);
  Tokens out;
  int prev = context.empty() ? kBos : context.back().id;
  while (static_cast<int>(out.size()) < max_len) {
    const std::vector<TokenProb> pool = nucleus(full_dist(prev), top_p);
    double mass = 0.0;
    for (const TokenProb& tp : pool) mass += tp.prob;
    const double u = canonical(rng) * mass;
    const TokenProb* pick = &pool.back();
    double acc = 0.0;
    for (const TokenProb& tp : pool) {
      acc += tp.prob;
      if (u < acc) {
        pick = &tp;
        break;
      }
    }
    if (pick->token.id == kEos) break;
    out.push_back(pick->token);
    if (pick->token.surface.find('.') != std::string::npos) break;
    prev = pick->token.id;
  }
  return out;
}

}  // namespace a2t::toy
