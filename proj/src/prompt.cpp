#include "a2t/prompt.hpp"

#include <sstream>

#include <json.hpp>

#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"

namespace a2t {

const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> templates = {
      {"plain", "<q>? the answer is <a> because"},
      {"structured", "Question: <q>? Answer: <a>. Explanation:"},
      {"structured_nl", "Question: <q>?\n Answer: <a>.\n Explanation:"},
      {"explain_answer", "Explain the Answer: <q>? The answer is <a> because"},
      {"answer_explain_nl", "Answer and Explain: <q>?\n The answer is <a> because"},
      {"answer_explain", "Answer and Explain: <q>? The answer is <a> because"},
  };
  return templates;
}

const PromptTemplate& default_template() { return builtin_templates().back(); }

const PromptTemplate& find_template(const std::vector<PromptTemplate>& templates, std::string_view id) {
  for (const PromptTemplate& t : templates)
    if (t.id == id) return t;
  throw InvalidTemplate("unknown template id '" + std::string(id) + "'");
}

namespace {

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

std::string_view strip_question_mark(std::string_view q) {
  std::string_view t = q;
  while (!t.empty() && (t.back() == ' ' || t.back() == '\t')) t.remove_suffix(1);
  if (t.empty() || t.back() != '?') return q;
  t.remove_suffix(1);
  return t;
}

}  // namespace

void check_template(const PromptTemplate& t) {
  if (count_of(t.pattern, kQuestionSlot) != 1 || count_of(t.pattern, kAnswerSlot) != 1)
    throw InvalidTemplate("template '" + t.id + "' must contain <q> and <a> exactly once");
}

std::string render(const PromptTemplate& t, std::string_view question, std::string_view answer) {
  check_template(t);
  const std::size_t q_pos = t.pattern.find(kQuestionSlot);
  // A '?' right after the slot would double a trailing one on the question.
  const bool template_has_mark = t.pattern.compare(q_pos + kQuestionSlot.size(), 1, "?") == 0;
  const std::string_view q = template_has_mark ? strip_question_mark(question) : question;

  std::string out;
  out.reserve(t.pattern.size() + question.size() + answer.size());
  for (std::size_t i = 0; i < t.pattern.size();) {
    if (t.pattern.compare(i, kQuestionSlot.size(), kQuestionSlot) == 0) {
      out += q;
      i += kQuestionSlot.size();
    } else if (t.pattern.compare(i, kAnswerSlot.size(), kAnswerSlot) == 0) {
      out += answer;
      i += kAnswerSlot.size();
    } else {
      out += t.pattern[i++];
    }
  }
  return out;
}

std::string render_n_shot(const std::vector<InContextExample>& examples, std::string_view question,
                          std::string_view answer, std::string_view separator) {
  std::string out;
  for (const InContextExample& ex : examples) {
    out += "Question: ";
    out += strip_question_mark(ex.question);
    out += "? Answer: ";
    out += ex.answer;
    out += ". Explanation: ";
    out += ex.explanation;
    if (ex.explanation.empty() || ex.explanation.back() != '.') out += ".";
    out += separator;
  }
  out += "Question: ";
  out += strip_question_mark(question);
  out += "? Answer: ";
  out += answer;
  out += ". Explanation:";
  return out;
}

std::vector<PromptTemplate> parse_templates(std::string_view text) {
  std::vector<PromptTemplate> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw InvalidTemplate("templates line " + std::to_string(lineno) + ": expected 'id<TAB>pattern'");
    PromptTemplate t{line.substr(0, tab), {}};
    const std::string raw = line.substr(tab + 1);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '\\' && i + 1 < raw.size() && raw[i + 1] == 'n') {
        t.pattern += '\n';
        ++i;
      } else {
        t.pattern += raw[i];
      }
    }
    check_template(t);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<PromptTemplate> load_templates(const std::string& path) { return parse_templates(read_file(path)); }

std::vector<InContextExample> load_examples(const std::string& path) {
  std::vector<InContextExample> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw InvalidInput("examples file: malformed JSON line");
    InContextExample ex{doc.value("question", ""), doc.value("answer", ""), doc.value("explanation", "")};
    if (ex.question.empty() || ex.answer.empty() || ex.explanation.empty())
      throw InvalidInput("examples file: question, answer and explanation must be non-empty");
    out.push_back(std::move(ex));
  }
  return out;
}

std::string PromptSpec::build(std::string_view question, std::string_view answer) const {
  if (shots) return render_n_shot(*shots, question, answer, separator);
  return render(tmpl, question, answer);
}

}  // namespace a2t
