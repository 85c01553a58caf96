#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace a2t::metrics {

/// Shared pre-processing for hypotheses and references: lowercase words,
/// punctuation acts as a separator and is dropped.
std::vector<std::string> normalize_tokens(std::string_view text);

/// Sentence BLEU-n (1 <= n <= 4): geometric mean of clipped n-gram
/// precisions times the brevity penalty against the closest reference
/// length. No smoothing.
double bleu(std::string_view hypothesis, const std::vector<std::string>& references, int n);

/// Corpus BLEU-1..4 with summed counts and lengths.
std::array<double, 4> corpus_bleu(const std::vector<std::string>& hypotheses,
                                  const std::vector<std::vector<std::string>>& references);

/// LCS F-measure with beta = 1.2, using the best precision and the best
/// recall over the references.
double rouge_l(std::string_view hypothesis, const std::vector<std::string>& references);

struct CiderResult {
  double corpus = 0.0;             // mean of per_item
  std::vector<double> per_item;
  bool degenerate = false;         // fewer than two items: idf is identically zero
};

/// CIDEr-D: tf-idf n-gram vectors (n = 1..4, idf over the reference sets),
/// clipped cosine, Gaussian length penalty, averaged over n and references,
/// multiplied by `scale`.
CiderResult cider_d(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& references, double sigma = 6.0,
                    double scale = 10.0);

struct EvalRecord {
  std::string question;
  std::string ground_truth_answer;
  std::string predicted_answer;
  std::vector<std::string> references;
  std::string hypothesis;
  bool gt_conditioned = false;
};

enum class EvalMode { all, gt_conditioned, answer_correct };
EvalMode eval_mode_from_string(std::string_view name);
std::string_view to_string(EvalMode mode);

/// Case-folded, leading article removed, whitespace collapsed.
std::string normalize_answer(std::string_view answer);

struct Scores {
  std::array<double, 4> bleu{};
  double rouge_l = 0.0;
  double cider_d = 0.0;
  bool cider_degenerate = false;
};

struct MetricRow {
  EvalMode mode = EvalMode::all;
  std::size_t selected = 0;
  std::optional<Scores> scores;  // absent when nothing was selected
};

MetricRow evaluate(const std::vector<EvalRecord>& records, EvalMode mode);

std::vector<EvalRecord> load_records(const std::string& path);
std::vector<EvalRecord> parse_records(std::string_view jsonl);

/// METEOR and SPICE are reported as unavailable.
std::string table_tsv(const std::vector<MetricRow>& rows);
std::string table_pretty(const std::vector<MetricRow>& rows);

}  // namespace a2t::metrics
