#include "a2t/attention.hpp"

#include <cmath>

#include "a2t/errors.hpp"
#include "a2t/io_util.hpp"

namespace a2t {

using nlohmann::json;

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::question_self: return "question_self";
    case LayerKind::image_self: return "image_self";
    case LayerKind::fusion: return "fusion";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  if (name == "question_self") return LayerKind::question_self;
  if (name == "image_self") return LayerKind::image_self;
  if (name == "fusion") return LayerKind::fusion;
  throw InvalidInput("unknown layer kind '" + std::string(name) + "'");
}

namespace {

void check_tensor(const HeadTensor& t, int heads, int rows, int cols, double tol,
                  const std::string& where) {
  if (static_cast<int>(t.size()) != heads)
    throw InvalidInput(where + ": expected " + std::to_string(heads) + " heads, got " +
                       std::to_string(t.size()));
  for (int h = 0; h < heads; ++h) {
    const Matrix& m = t[h];
    if (m.rows() != rows || m.cols() != cols)
      throw InvalidInput(where + ": head " + std::to_string(h) + " has shape " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                         ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
    for (int r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        const double v = m(r, c);
        if (!std::isfinite(v) || v < 0.0)
          throw InvalidInput(where + ": negative or non-finite weight at head " +
                             std::to_string(h) + " row " + std::to_string(r));
        sum += v;
      }
      if (std::abs(sum - 1.0) > tol)
        throw InvalidInput(where + ": head " + std::to_string(h) + " row " + std::to_string(r) +
                           " sums to " + std::to_string(sum));
    }
  }
}

}  // namespace

void validate(const AttentionStack& stack, double row_tolerance) {
  if (stack.q_len <= 0 || stack.i_len <= 0)
    throw InvalidInput("q_len and i_len must be positive");
  if (stack.cls_offset != 0 && stack.cls_offset != 1)
    throw InvalidInput("cls_offset must be 0 or 1");
  if (stack.patch_grid.rows <= 0 || stack.patch_grid.cols <= 0)
    throw InvalidInput("patch_grid dimensions must be positive");
  if (stack.patch_grid.size() != stack.i_len - stack.cls_offset)
    throw InvalidInput("patch_grid " + std::to_string(stack.patch_grid.rows) + "x" +
                       std::to_string(stack.patch_grid.cols) + " does not cover i_len - cls_offset = " +
                       std::to_string(stack.i_len - stack.cls_offset));

  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const LayerAttention& layer = stack.layers[l];
    const std::string where = "layer " + std::to_string(l) + " (" + std::string(to_string(layer.kind)) + ")";
    if (layer.heads < 1) throw InvalidInput(where + ": heads must be >= 1");
    const bool want_qq = layer.kind != LayerKind::image_self;
    const bool want_ii = layer.kind == LayerKind::image_self;
    const bool want_qi = layer.kind == LayerKind::fusion;
    if (layer.qq.has_value() != want_qq || layer.ii.has_value() != want_ii ||
        layer.qi.has_value() != want_qi)
      throw InvalidInput(where + ": tensors present do not match layer kind");
    if (layer.qq) check_tensor(*layer.qq, layer.heads, stack.q_len, stack.q_len, row_tolerance, where + " qq");
    if (layer.ii) check_tensor(*layer.ii, layer.heads, stack.i_len, stack.i_len, row_tolerance, where + " ii");
    if (layer.qi) check_tensor(*layer.qi, layer.heads, stack.q_len, stack.i_len, row_tolerance, where + " qi");
  }
}

namespace {

json flatten(const HeadTensor& t) {
  json out = json::array();
  for (const Matrix& m : t)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

HeadTensor unflatten(const json& arr, int heads, int rows, int cols, const std::string& where) {
  if (!arr.is_array()) throw InvalidInput(where + ": expected an array");
  const std::size_t expected = static_cast<std::size_t>(heads) * rows * cols;
  if (arr.size() != expected)
    throw InvalidInput(where + ": expected " + std::to_string(expected) + " values, got " +
                       std::to_string(arr.size()));
  HeadTensor t(heads, Matrix(rows, cols));
  std::size_t k = 0;
  for (int h = 0; h < heads; ++h)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const json& v = arr[k++];
        if (!v.is_number()) throw InvalidInput(where + ": non-numeric entry");
        t[h](r, c) = v.get<double>();
      }
  return t;
}

int get_int(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_number_integer())
    throw InvalidInput(std::string("attention dump: missing integer field '") + key + "'");
  return it->get<int>();
}

}  // namespace

json to_json(const AttentionStack& stack) {
  json doc;
  doc["q_len"] = stack.q_len;
  doc["i_len"] = stack.i_len;
  doc["cls_offset"] = stack.cls_offset;
  doc["patch_grid"] = {stack.patch_grid.rows, stack.patch_grid.cols};
  json layers = json::array();
  for (const LayerAttention& layer : stack.layers) {
    json l;
    l["kind"] = to_string(layer.kind);
    l["heads"] = layer.heads;
    if (layer.qq) l["qq"] = flatten(*layer.qq);
    if (layer.ii) l["ii"] = flatten(*layer.ii);
    if (layer.qi) l["qi"] = flatten(*layer.qi);
    layers.push_back(std::move(l));
  }
  doc["layers"] = std::move(layers);
  return doc;
}

AttentionStack attention_stack_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidInput("attention dump: expected a JSON object");
  AttentionStack stack;
  stack.q_len = get_int(doc, "q_len");
  stack.i_len = get_int(doc, "i_len");
  stack.cls_offset = doc.contains("cls_offset") ? get_int(doc, "cls_offset") : 0;
  const auto grid = doc.find("patch_grid");
  if (grid == doc.end() || !grid->is_array() || grid->size() != 2 || !(*grid)[0].is_number_integer() ||
      !(*grid)[1].is_number_integer())
    throw InvalidInput("attention dump: patch_grid must be [rows, cols]");
  stack.patch_grid = {(*grid)[0].get<int>(), (*grid)[1].get<int>()};
  if (stack.q_len <= 0 || stack.i_len <= 0) throw InvalidInput("q_len and i_len must be positive");

  const auto layers = doc.find("layers");
  if (layers == doc.end() || !layers->is_array())
    throw InvalidInput("attention dump: missing 'layers' array");
  for (std::size_t idx = 0; idx < layers->size(); ++idx) {
    const json& l = (*layers)[idx];
    const std::string where = "layer " + std::to_string(idx);
    if (!l.is_object() || !l.contains("kind") || !l["kind"].is_string())
      throw InvalidInput(where + ": missing 'kind'");
    LayerAttention layer;
    layer.kind = layer_kind_from_string(l["kind"].get<std::string>());
    layer.heads = get_int(l, "heads");
    if (layer.heads < 1) throw InvalidInput(where + ": heads must be >= 1");
    if (l.contains("qq")) layer.qq = unflatten(l["qq"], layer.heads, stack.q_len, stack.q_len, where + " qq");
    if (l.contains("ii")) layer.ii = unflatten(l["ii"], layer.heads, stack.i_len, stack.i_len, where + " ii");
    if (l.contains("qi")) layer.qi = unflatten(l["qi"], layer.heads, stack.q_len, stack.i_len, where + " qi");
    stack.layers.push_back(std::move(layer));
  }
  validate(stack);
  return stack;
}

AttentionStack load_attention_dump(const std::string& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InvalidInput("attention dump '" + path + "': " + e.what());
  }
  return attention_stack_from_json(doc);
}

void save_attention_dump(const AttentionStack& stack, const std::string& path) {
  write_file_atomic(path, to_json(stack).dump() + "\n");
}

}  // namespace a2t
