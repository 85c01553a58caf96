#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace a2t {

using Matrix = Eigen::MatrixXd;

/// Per-head attention weights, one m×n matrix per head.
using HeadTensor = std::vector<Matrix>;

enum class LayerKind { question_self, image_self, fusion };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerAttention {
  LayerKind kind = LayerKind::question_self;
  int heads = 1;
  std::optional<HeadTensor> qq;  // H × q × q
  std::optional<HeadTensor> ii;  // H × i × i
  std::optional<HeadTensor> qi;  // H × q × i, fusion layers only
};

struct PatchGrid {
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
  bool operator==(const PatchGrid&) const = default;
};

/// Recorded attention of one VQA forward pass, layers in forward order.
/// Image token 0 is a non-spatial classification token when cls_offset == 1.
struct AttentionStack {
  std::vector<LayerAttention> layers;
  int q_len = 0;
  int i_len = 0;
  int cls_offset = 0;
  PatchGrid patch_grid;
};

/// Throws InvalidInput describing the first violated invariant.
void validate(const AttentionStack& stack, double row_tolerance = 1e-5);

/// Attention dump document (flat row-major arrays per tensor).
nlohmann::json to_json(const AttentionStack& stack);
/// Parses and validates a dump document.
AttentionStack attention_stack_from_json(const nlohmann::json& doc);

AttentionStack load_attention_dump(const std::string& path);
void save_attention_dump(const AttentionStack& stack, const std::string& path);

}  // namespace a2t
