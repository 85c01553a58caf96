#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace a2t {

/// Pattern with one "<q>" and one "<a>" placeholder.
struct PromptTemplate {
  std::string id;
  std::string pattern;
};

struct InContextExample {
  std::string question;
  std::string answer;
  std::string explanation;
};

inline constexpr std::string_view kQuestionSlot = "<q>";
inline constexpr std::string_view kAnswerSlot = "<a>";

/// The prompt variants compared in the prompt ablation; the last one is the default.
const std::vector<PromptTemplate>& builtin_templates();
const PromptTemplate& default_template();
const PromptTemplate& find_template(const std::vector<PromptTemplate>& templates, std::string_view id);

/// Throws InvalidTemplate unless each placeholder occurs exactly once.
void check_template(const PromptTemplate& t);

std::string render(const PromptTemplate& t, std::string_view question, std::string_view answer);

std::string render_n_shot(const std::vector<InContextExample>& examples, std::string_view question,
                          std::string_view answer, std::string_view separator = " ");

/// "id<TAB>pattern" per line; "\n" in a pattern denotes a newline, '#' starts a comment line.
std::vector<PromptTemplate> load_templates(const std::string& path);
std::vector<PromptTemplate> parse_templates(std::string_view text);

/// JSON lines with question / answer / explanation fields.
std::vector<InContextExample> load_examples(const std::string& path);

/// Which prompt flavour a translation uses.
struct PromptSpec {
  PromptTemplate tmpl = default_template();
  std::optional<std::vector<InContextExample>> shots;  // set => n-shot prompt
  std::string separator = " ";

  std::string build(std::string_view question, std::string_view answer) const;
};

}  // namespace a2t
