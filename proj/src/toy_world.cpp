#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"
#include "a2t/toy.hpp"

namespace a2t::toy {

using nlohmann::json;

Palette::Palette(std::vector<std::string> concepts, std::uint64_t seed) : concepts_(std::move(concepts)) {
  std::mt19937_64 rng(seed);
  for (const std::string& c : concepts_) {
    if (colors_.count(c)) throw InvalidInput("palette: duplicate concept '" + c + "'");
    Rgb color;
    do {
      const std::uint64_t bits = rng();
      color = {static_cast<std::uint8_t>(bits), static_cast<std::uint8_t>(bits >> 8),
               static_cast<std::uint8_t>(bits >> 16)};
      // Dark colors are rejected so no concept can be confused with a masked patch.
    } while (color.r + color.g + color.b < 96 || reverse_.count(color));
    colors_.emplace(c, color);
    reverse_.emplace(color, c);
  }
}

const Palette& Palette::shipped() {
  static const Palette palette = [] {
    std::vector<std::string> concepts;
    std::istringstream in(read_file(data_path("concepts.txt")));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty() && line.front() != '#') concepts.push_back(line);
    return Palette(std::move(concepts), 0);
  }();
  return palette;
}

Rgb Palette::color_of(std::string_view concept_word) const {
  auto it = colors_.find(concept_word);
  if (it == colors_.end()) throw InvalidInput("palette: unknown concept '" + std::string(concept_word) + "'");
  return it->second;
}

std::string Palette::concept_of(Rgb color) const {
  auto it = reverse_.find(color);
  return it == reverse_.end() ? std::string() : it->second;
}

bool Palette::contains(std::string_view concept_word) const { return colors_.find(concept_word) != colors_.end(); }

Image ToyScene::render(const Palette& palette) const {
  Image img(cols() * patch_px, rows() * patch_px);
  for (int r = 0; r < rows(); ++r)
    for (int c = 0; c < cols(); ++c) {
      const Rgb color = palette.color_of(grid[r][c]);
      for (int y = r * patch_px; y < (r + 1) * patch_px; ++y)
        for (int x = c * patch_px; x < (c + 1) * patch_px; ++x) {
          std::uint8_t* px = img.at(x, y);
          px[0] = color.r;
          px[1] = color.g;
          px[2] = color.b;
        }
    }
  return img;
}

ToyScene ToyScene::from_json(const json& doc) {
  ToyScene scene;
  if (!doc.is_object() || !doc.contains("grid") || !doc["grid"].is_array() || doc["grid"].empty())
    throw InvalidInput("scene: expected {\"grid\": [[...], ...]}");
  for (const json& row : doc["grid"]) {
    if (!row.is_array() || row.empty()) throw InvalidInput("scene: grid rows must be non-empty arrays");
    std::vector<std::string> words;
    for (const json& w : row) {
      if (!w.is_string()) throw InvalidInput("scene: grid entries must be strings");
      words.push_back(w.get<std::string>());
    }
    if (!scene.grid.empty() && words.size() != scene.grid.front().size())
      throw InvalidInput("scene: grid is not rectangular");
    scene.grid.push_back(std::move(words));
  }
  scene.patch_px = doc.value("patch_px", 16);
  if (scene.patch_px < 1) throw InvalidInput("scene: patch_px must be positive");
  for (const auto& row : scene.grid)
    for (const auto& w : row)
      if (!Palette::shipped().contains(w)) throw InvalidInput("scene: '" + w + "' is not a known concept");
  return scene;
}

ToyScene ToyScene::load(const std::string& path) {
  const json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw InvalidInput("scene '" + path + "': malformed JSON");
  return from_json(doc);
}

json ToyScene::to_json() const { return json{{"grid", grid}, {"patch_px", patch_px}}; }

std::vector<std::string> decode_patches(const Image& image, const Palette& palette, int patch_px) {
  const int cols = image.width / patch_px;
  const int rows = image.height / patch_px;
  if (rows < 1 || cols < 1) throw InvalidInput("image is smaller than one toy patch");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      std::map<std::string, int> votes;
      for (int y = r * patch_px; y < (r + 1) * patch_px; ++y)
        for (int x = c * patch_px; x < (c + 1) * patch_px; ++x) {
          const std::uint8_t* px = image.at(x, y);
          ++votes[palette.concept_of({px[0], px[1], px[2]})];
        }
      std::string best;
      int best_votes = 0;
      for (const auto& [name, n] : votes)
        if (n > best_votes) {
          best = name;
          best_votes = n;
        }
      out.push_back(2 * best_votes > patch_px * patch_px ? best : std::string());
    }
  return out;
}

std::vector<std::string> bag_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<double> ToyMatcher::cosine_scores(const Image& image, const std::vector<std::string>& sentences) const {
  std::set<std::string> visible;
  for (std::string& c : decode_patches(image, palette_, patch_px_))
    if (!c.empty()) visible.insert(std::move(c));
  std::vector<double> scores;
  scores.reserve(sentences.size());
  for (const std::string& s : sentences) {
    const std::vector<std::string> w = bag_words(s);
    const std::set<std::string> words(w.begin(), w.end());
    if (words.empty() || visible.empty()) {
      scores.push_back(0.0);
      continue;
    }
    std::size_t overlap = 0;
    for (const std::string& v : visible) overlap += words.count(v);
    scores.push_back(static_cast<double>(overlap) /
                     std::sqrt(static_cast<double>(visible.size()) * static_cast<double>(words.size())));
  }
  return scores;
}

namespace {

int resolve_axis(const std::string& named, bool middle, int extent, const char* lo) {
  if (!named.empty()) {
    if (extent < 2) return -1;
    return named == lo ? 0 : extent - 1;
  }
  if (extent == 1) return 0;
  if (middle && extent % 2 == 1) return extent / 2;
  return -1;
}

}  // namespace

GridPosition parse_position(std::string_view question, int rows, int cols) {
  const std::vector<std::string> words = bag_words(question);
  if (words.size() < 2 || words[0] != "what" || words[1] != "is")
    throw Unanswerable("question must have the form 'what is on the <position>'");

  for (std::size_t i = 0; i + 3 < words.size(); ++i) {
    if (words[i] == "row" && words[i + 2] == "column") {
      const int r = std::atoi(words[i + 1].c_str());
      const int c = std::atoi(words[i + 3].c_str());
      if (r < 1 || r > rows || c < 1 || c > cols)
        throw Unanswerable("position row " + words[i + 1] + " column " + words[i + 3] + " is outside the scene");
      return {r - 1, c - 1};
    }
  }

  std::string vertical, horizontal;
  bool middle = false;
  for (const std::string& w : words) {
    if (w == "top" || w == "bottom") vertical = w;
    else if (w == "left" || w == "right") horizontal = w;
    else if (w == "middle" || w == "center" || w == "centre") middle = true;
  }
  const int r = resolve_axis(vertical, middle, rows, "top");
  const int c = resolve_axis(horizontal, middle, cols, "left");
  if (r < 0 || c < 0)
    throw Unanswerable("cannot locate '" + std::string(question) + "' in a " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " scene");
  return {r, c};
}

std::string position_question(int row, int col, int rows, int cols) {
  if (rows > 3 || cols > 3)
    return "what is in row " + std::to_string(row + 1) + " column " + std::to_string(col + 1);
  auto axis = [](int i, int n, const char* lo, const char* mid, const char* hi) -> std::string {
    if (n == 1) return "";
    if (i == 0) return lo;
    if (i == n - 1) return hi;
    return mid;
  };
  const std::string v = axis(row, rows, "top", "middle", "bottom");
  const std::string h = axis(col, cols, "left", "center", "right");
  if (v.empty() && h.empty()) return "what is in the picture";
  if (v == "middle" && h == "center") return "what is in the center";
  if (v.empty()) return "what is on the " + h;
  if (h.empty()) return "what is on the " + v;
  return "what is on the " + v + " " + h;
}

namespace {

Matrix diagonal_mix(int n, double diag) {
  if (n == 1) return Matrix::Ones(1, 1);
  Matrix m = Matrix::Constant(n, n, (1.0 - diag) / (n - 1));
  m.diagonal().setConstant(diag);
  return m;
}

Matrix uniform(int rows, int cols) { return Matrix::Constant(rows, cols, 1.0 / cols); }

Matrix focused(int rows, int cols, int target, double weight) {
  Matrix m = Matrix::Constant(rows, cols, (1.0 - weight) / (cols - 1));
  m.col(target).setConstant(weight);
  return m;
}

}  // namespace

AttentionStack build_toy_stack(int q_len, int rows, int cols, GridPosition target, bool uniform_attention) {
  AttentionStack stack;
  stack.q_len = q_len;
  stack.cls_offset = 1;
  stack.i_len = rows * cols + 1;
  stack.patch_grid = {rows, cols};
  const int i = stack.i_len;
  const int answer = 1 + target.row * cols + target.col;

  for (int l = 0; l < 2; ++l) {
    LayerAttention layer{LayerKind::image_self, 2, std::nullopt, HeadTensor{diagonal_mix(i, 0.6), uniform(i, i)},
                         std::nullopt};
    stack.layers.push_back(std::move(layer));
  }
  const HeadTensor qq{diagonal_mix(q_len, 0.5), uniform(q_len, q_len)};
  stack.layers.push_back({LayerKind::question_self, 2, qq, std::nullopt, std::nullopt});
  for (int l = 0; l < 2; ++l) {
    HeadTensor qi = uniform_attention ? HeadTensor{uniform(q_len, i), uniform(q_len, i)}
                                      : HeadTensor{focused(q_len, i, answer, 0.9), focused(q_len, i, answer, 0.95)};
    stack.layers.push_back({LayerKind::fusion, 2, qq, std::nullopt, std::move(qi)});
  }
  return stack;
}

VqaOutput ToyVqa::infer(const Image& image, const std::string& question) const {
  const int cols = image.width / patch_px_;
  const int rows = image.height / patch_px_;
  const std::vector<std::string> patches = decode_patches(image, palette_, patch_px_);
  const GridPosition pos = parse_position(question, rows, cols);
  const std::string& answer = patches[static_cast<std::size_t>(pos.row) * cols + pos.col];
  if (answer.empty()) throw Unanswerable("the patch at the asked position shows no known concept");
  const int q_len = std::max<int>(1, static_cast<int>(bag_words(question).size()));
  return {answer, build_toy_stack(q_len, rows, cols, pos, uniform_)};
}

}  // namespace a2t::toy
