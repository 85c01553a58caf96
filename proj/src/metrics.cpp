#include "a2t/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"

namespace a2t::metrics {

namespace {

using Words = std::vector<std::string>;
using NgramCounts = std::map<std::string, int>;

constexpr int kMaxN = 4;

// n-grams keyed by their words joined with a unit separator
NgramCounts count_ngrams(const Words& words, int n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += words[i + j];
    }
    ++counts[key];
  }
  return counts;
}

struct BleuStats {
  std::array<double, kMaxN> correct{};
  std::array<double, kMaxN> guess{};
  double hyp_len = 0.0;
  double ref_len = 0.0;
};

std::size_t closest_length(std::size_t hyp_len, const std::vector<Words>& refs) {
  std::size_t best = refs.front().size();
  for (const Words& r : refs) {
    const auto diff = [hyp_len](std::size_t l) { return l > hyp_len ? l - hyp_len : hyp_len - l; };
    if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) best = r.size();
  }
  return best;
}

void accumulate(BleuStats& stats, const Words& hyp, const std::vector<Words>& refs) {
  for (int n = 1; n <= kMaxN; ++n) {
    NgramCounts max_ref;
    for (const Words& r : refs)
      for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : count_ngrams(hyp, n)) {
      stats.guess[n - 1] += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) stats.correct[n - 1] += std::min(c, it->second);
    }
  }
  stats.hyp_len += static_cast<double>(hyp.size());
  stats.ref_len += static_cast<double>(closest_length(hyp.size(), refs));
}

double bleu_from(const BleuStats& s, int n) {
  if (s.hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    if (s.guess[k] == 0.0 || s.correct[k] == 0.0) return 0.0;
    log_sum += std::log(s.correct[k] / s.guess[k]);
  }
  const double bp = s.hyp_len >= s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.hyp_len);
  return bp * std::exp(log_sum / n);
}

std::vector<Words> normalize_all(const std::vector<std::string>& texts) {
  std::vector<Words> out;
  out.reserve(texts.size());
  for (const std::string& t : texts) out.push_back(normalize_tokens(t));
  return out;
}

std::size_t lcs_length(const Words& a, const Words& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

std::vector<std::string> normalize_tokens(std::string_view text) {
  Words words;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'' || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

double bleu(std::string_view hypothesis, const std::vector<std::string>& references, int n) {
  if (n < 1 || n > kMaxN) throw InvalidInput("bleu: n must lie in [1, 4]");
  if (references.empty()) throw InvalidInput("bleu: at least one reference is required");
  BleuStats stats;
  accumulate(stats, normalize_tokens(hypothesis), normalize_all(references));
  return bleu_from(stats, n);
}

std::array<double, 4> corpus_bleu(const std::vector<std::string>& hypotheses,
                                  const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.size() != references.size()) throw InvalidInput("corpus_bleu: hypothesis/reference count mismatch");
  BleuStats stats;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty()) throw InvalidInput("corpus_bleu: record without references");
    accumulate(stats, normalize_tokens(hypotheses[i]), normalize_all(references[i]));
  }
  return {bleu_from(stats, 1), bleu_from(stats, 2), bleu_from(stats, 3), bleu_from(stats, 4)};
}

double rouge_l(std::string_view hypothesis, const std::vector<std::string>& references) {
  constexpr double beta = 1.2;
  const Words hyp = normalize_tokens(hypothesis);
  if (hyp.empty() || references.empty()) return 0.0;
  double best_p = 0.0, best_r = 0.0;
  for (const std::string& ref_text : references) {
    const Words ref = normalize_tokens(ref_text);
    if (ref.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(hyp, ref));
    best_p = std::max(best_p, lcs / static_cast<double>(hyp.size()));
    best_r = std::max(best_r, lcs / static_cast<double>(ref.size()));
  }
  if (best_p == 0.0 || best_r == 0.0) return 0.0;
  return (1.0 + beta * beta) * best_p * best_r / (best_r + beta * beta * best_p);
}

namespace {

struct TfIdf {
  std::array<std::map<std::string, double>, kMaxN> vec;
  std::array<double, kMaxN> norm{};
  double length = 0.0;
};

TfIdf tfidf(const Words& words, const std::map<std::string, double>& log_df, double log_corpus) {
  TfIdf out;
  for (int n = 1; n <= kMaxN; ++n) {
    for (const auto& [g, tf] : count_ngrams(words, n)) {
      auto it = log_df.find(g);
      const double ldf = it == log_df.end() ? 0.0 : it->second;
      const double w = tf * (log_corpus - ldf);
      out.vec[n - 1][g] = w;
      out.norm[n - 1] += w * w;
    }
    out.norm[n - 1] = std::sqrt(out.norm[n - 1]);
  }
  out.length = static_cast<double>(words.size());
  return out;
}

}  // namespace

CiderResult cider_d(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& references, double sigma, double scale) {
  if (hypotheses.size() != references.size()) throw InvalidInput("cider_d: hypothesis/reference count mismatch");
  CiderResult result;
  result.degenerate = hypotheses.size() < 2;
  if (hypotheses.empty()) return result;

  std::vector<std::vector<Words>> refs;
  std::map<std::string, double> df;
  for (const auto& set : references) {
    if (set.empty()) throw InvalidInput("cider_d: record without references");
    refs.push_back(normalize_all(set));
    std::set<std::string> seen;
    for (const Words& r : refs.back())
      for (int n = 1; n <= kMaxN; ++n)
        for (const auto& kv : count_ngrams(r, n)) seen.insert(kv.first);
    for (const std::string& g : seen) df[g] += 1.0;
  }
  for (auto& kv : df) kv.second = std::log(std::max(1.0, kv.second));
  const double log_corpus = std::log(static_cast<double>(hypotheses.size()));

  double total = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const TfIdf hyp = tfidf(normalize_tokens(hypotheses[i]), df, log_corpus);
    std::array<double, kMaxN> sum{};
    for (const Words& r : refs[i]) {
      const TfIdf ref = tfidf(r, df, log_corpus);
      const double delta = hyp.length - ref.length;
      for (int n = 0; n < kMaxN; ++n) {
        double val = 0.0;
        for (const auto& [g, w] : hyp.vec[n]) {
          auto it = ref.vec[n].find(g);
          if (it != ref.vec[n].end()) val += std::min(w, it->second) * it->second;
        }
        if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
        sum[n] += val * std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      }
    }
    double mean = 0.0;
    for (double v : sum) mean += v;
    mean /= kMaxN;
    const double score = mean / static_cast<double>(refs[i].size()) * scale;
    result.per_item.push_back(score);
    total += score;
  }
  result.corpus = total / static_cast<double>(hypotheses.size());
  return result;
}

EvalMode eval_mode_from_string(std::string_view name) {
  if (name == "all") return EvalMode::all;
  if (name == "gt_conditioned") return EvalMode::gt_conditioned;
  if (name == "answer_correct") return EvalMode::answer_correct;
  throw InvalidInput("unknown evaluation mode '" + std::string(name) + "'");
}

std::string_view to_string(EvalMode mode) {
  switch (mode) {
    case EvalMode::all: return "all";
    case EvalMode::gt_conditioned: return "gt_conditioned";
    case EvalMode::answer_correct: return "answer_correct";
  }
  return "?";
}

std::string normalize_answer(std::string_view answer) {
  std::istringstream in{std::string(answer)};
  std::vector<std::string> words;
  std::string w;
  while (in >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return std::tolower(c); });
    words.push_back(w);
  }
  if (!words.empty() && (words.front() == "a" || words.front() == "an" || words.front() == "the"))
    words.erase(words.begin());
  std::string out;
  for (const std::string& x : words) {
    if (!out.empty()) out += ' ';
    out += x;
  }
  return out;
}

MetricRow evaluate(const std::vector<EvalRecord>& records, EvalMode mode) {
  std::vector<std::string> hyps;
  std::vector<std::vector<std::string>> refs;
  for (const EvalRecord& r : records) {
    if (r.references.empty()) throw InvalidInput("evaluate: record without references");
    if (mode == EvalMode::answer_correct &&
        normalize_answer(r.predicted_answer) != normalize_answer(r.ground_truth_answer))
      continue;
    hyps.push_back(r.hypothesis);
    refs.push_back(r.references);
  }
  MetricRow row;
  row.mode = mode;
  row.selected = hyps.size();
  if (hyps.empty()) return row;

  Scores s;
  s.bleu = corpus_bleu(hyps, refs);
  double rl = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) rl += rouge_l(hyps[i], refs[i]);
  s.rouge_l = rl / static_cast<double>(hyps.size());
  const CiderResult c = cider_d(hyps, refs);
  s.cider_d = c.corpus;
  s.cider_degenerate = c.degenerate;
  row.scores = s;
  return row;
}

std::vector<EvalRecord> parse_records(std::string_view jsonl) {
  std::vector<EvalRecord> out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    const std::string where = "dataset line " + std::to_string(lineno);
    if (doc.is_discarded() || !doc.is_object()) throw InvalidInput(where + ": malformed JSON");
    EvalRecord r;
    try {
      r.question = doc.value("question", "");
      r.ground_truth_answer = doc.value("ground_truth_answer", "");
      r.predicted_answer = doc.value("predicted_answer", "");
      r.hypothesis = doc.value("hypothesis", "");
      r.gt_conditioned = doc.value("gt_conditioned", false);
      if (doc.contains("references")) r.references = doc["references"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput(where + ": " + e.what());
    }
    if (r.references.empty()) throw InvalidInput(where + ": references must be non-empty");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EvalRecord> load_records(const std::string& path) { return parse_records(read_file(path)); }

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

std::string table_tsv(const std::vector<MetricRow>& rows) {
  std::string out = "mode\tn\tB1\tB2\tB3\tB4\tM\tRL\tC\tS\n";
  for (const MetricRow& r : rows) {
    out += std::string(to_string(r.mode)) + "\t" + std::to_string(r.selected);
    if (!r.scores) {
      out += "\tabsent\tabsent\tabsent\tabsent\tn/a\tabsent\tabsent\tn/a\n";
      continue;
    }
    const Scores& s = *r.scores;
    for (double b : s.bleu) out += "\t" + fmt("%.6f", b);
    out += "\tn/a\t" + fmt("%.6f", s.rouge_l) + "\t" + fmt("%.6f", s.cider_d) + "\tn/a\n";
  }
  return out;
}

std::string table_pretty(const std::vector<MetricRow>& rows) {
  std::string out = "mode              n      B1     B2     B3     B4      M     RL      C      S\n";
  for (const MetricRow& r : rows) {
    char head[64];
    std::snprintf(head, sizeof head, "%-15s %4zu", std::string(to_string(r.mode)).c_str(), r.selected);
    out += head;
    if (!r.scores) {
      out += "  absent (no records selected)\n";
      continue;
    }
    const Scores& s = *r.scores;
    for (double b : s.bleu) out += fmt("%7.1f", 100.0 * b);
    out += "    n/a" + fmt("%7.1f", 100.0 * s.rouge_l) + fmt("%7.1f", 100.0 * s.cider_d) + "    n/a";
    if (s.cider_degenerate) out += "  (CIDEr-D idf degenerate: fewer than 2 records)";
    out += "\n";
  }
  return out;
}

}  // namespace a2t::metrics
