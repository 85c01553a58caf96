#pragma once

#include <optional>

#include "a2t/attention.hpp"
#include "a2t/image.hpp"

namespace a2t {

/// Rolled-out attention accumulators after some number of layers.
struct RolloutState {
  Matrix qq;  // q × q question contextualization
  Matrix ii;  // i × i image contextualization
  Matrix qi;  // q × i question-to-image relevance

  /// Identity self-accumulators, zero cross accumulator.
  static RolloutState initial(int q_len, int i_len);
};

/// Elementwise maximum over heads.
Matrix head_reduce(const HeadTensor& heads);

/// Residual self-attention rollout on whichever sides are given:
/// R <- R + A·R, then each row of R rescaled to sum to one.
RolloutState step_self(RolloutState state, const Matrix* a_qq, const Matrix* a_ii);

/// Carries the previous cross accumulator through question self-attention:
/// Rqi <- Rqi + A_qq·Rqi.
RolloutState step_mixed(RolloutState state, const Matrix& a_qq);

/// Rqi <- Rqi + Rqqᵀ·A_qi·Rii.
RolloutState step_cross(RolloutState state, const Matrix& a_qi);

/// Rolls the whole stack out. Fusion layers apply step_self, step_mixed and
/// step_cross in that order.
RolloutState rollout(const AttentionStack& stack);

/// Mean of Rqi over question rows, spatial columns only, on the patch grid.
SaliencyMap saliency_raw(const RolloutState& state, const AttentionStack& stack);
/// saliency_raw followed by min-max normalization (constant maps become zero).
SaliencyMap saliency(const RolloutState& state, const AttentionStack& stack);
SaliencyMap normalize(SaliencyMap s);

/// Keep-mask at out_w × out_h: a pixel is kept iff tau < saliency of its
/// patch. If nothing passes, the highest-saliency patch (first in row-major
/// order on ties) is kept.
BinaryMask threshold_mask(const SaliencyMap& s, double tau, int out_w, int out_h);

/// Patch-resolution view of threshold_mask (rows × cols, row-major).
std::vector<std::uint8_t> patch_mask(const SaliencyMap& s, double tau);

MaskedImage apply_mask(const Image& img, const BinaryMask& m);

}  // namespace a2t
