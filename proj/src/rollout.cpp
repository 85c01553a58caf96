#include "a2t/rollout.hpp"

#include <algorithm>
#include <string>

#include "a2t/errors.hpp"

namespace a2t {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw InvalidInput(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", got " + shape(m));
}

void normalize_rows(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double sum = m.row(r).sum();
    if (sum > 0.0) m.row(r) /= sum;
  }
}

}  // namespace

RolloutState RolloutState::initial(int q_len, int i_len) {
  return {Matrix::Identity(q_len, q_len), Matrix::Identity(i_len, i_len), Matrix::Zero(q_len, i_len)};
}

Matrix head_reduce(const HeadTensor& heads) {
  if (heads.empty()) throw InvalidInput("head_reduce: empty head axis");
  Matrix out = heads.front();
  for (std::size_t h = 1; h < heads.size(); ++h) {
    require_shape(heads[h], out.rows(), out.cols(), "head_reduce");
    out = out.cwiseMax(heads[h]);
  }
  return out;
}

RolloutState step_self(RolloutState state, const Matrix* a_qq, const Matrix* a_ii) {
  if (a_qq) {
    require_shape(*a_qq, state.qq.rows(), state.qq.cols(), "step_self (qq)");
    state.qq += (*a_qq) * state.qq;
    normalize_rows(state.qq);
  }
  if (a_ii) {
    require_shape(*a_ii, state.ii.rows(), state.ii.cols(), "step_self (ii)");
    state.ii += (*a_ii) * state.ii;
    normalize_rows(state.ii);
  }
  return state;
}

RolloutState step_mixed(RolloutState state, const Matrix& a_qq) {
  require_shape(a_qq, state.qi.rows(), state.qi.rows(), "step_mixed");
  state.qi += a_qq * state.qi;
  return state;
}

RolloutState step_cross(RolloutState state, const Matrix& a_qi) {
  require_shape(a_qi, state.qq.rows(), state.ii.rows(), "step_cross");
  state.qi += state.qq.transpose() * a_qi * state.ii;
  return state;
}

RolloutState rollout(const AttentionStack& stack) {
  RolloutState state = RolloutState::initial(stack.q_len, stack.i_len);
  for (const LayerAttention& layer : stack.layers) {
    switch (layer.kind) {
      case LayerKind::question_self: {
        const Matrix a = head_reduce(layer.qq.value());
        state = step_self(std::move(state), &a, nullptr);
        break;
      }
      case LayerKind::image_self: {
        const Matrix a = head_reduce(layer.ii.value());
        state = step_self(std::move(state), nullptr, &a);
        break;
      }
      case LayerKind::fusion: {
        const Matrix a_qq = head_reduce(layer.qq.value());
        const Matrix a_qi = head_reduce(layer.qi.value());
        state = step_self(std::move(state), &a_qq, nullptr);
        state = step_mixed(std::move(state), a_qq);
        state = step_cross(std::move(state), a_qi);
        break;
      }
    }
  }
  return state;
}

SaliencyMap saliency_raw(const RolloutState& state, const AttentionStack& stack) {
  const int spatial = stack.i_len - stack.cls_offset;
  if (state.qi.cols() != stack.i_len || state.qi.rows() != stack.q_len)
    throw InvalidInput("saliency: rollout state does not match stack (" + shape(state.qi) + ")");
  if (spatial != stack.patch_grid.size()) throw InvalidInput("saliency: patch grid does not match i_len");
  SaliencyMap s;
  s.rows = stack.patch_grid.rows;
  s.cols = stack.patch_grid.cols;
  s.values.resize(spatial);
  const Eigen::RowVectorXd mean = state.qi.colwise().mean();
  for (int p = 0; p < spatial; ++p) s.values[p] = mean(stack.cls_offset + p);
  return s;
}

SaliencyMap normalize(SaliencyMap s) {
  if (s.values.empty()) {
    s.normalized = true;
    return s;
  }
  const auto [lo, hi] = std::minmax_element(s.values.begin(), s.values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  for (double& v : s.values) v = range > 0.0 ? (v - min) / range : 0.0;
  s.normalized = true;
  return s;
}

SaliencyMap saliency(const RolloutState& state, const AttentionStack& stack) {
  return normalize(saliency_raw(state, stack));
}

std::vector<std::uint8_t> patch_mask(const SaliencyMap& s, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput("threshold_mask: tau must lie in [0, 1]");
  if (s.values.empty()) throw InvalidInput("threshold_mask: empty saliency map");
  std::vector<std::uint8_t> bits(s.values.size(), 0);
  bool any = false;
  for (std::size_t p = 0; p < bits.size(); ++p) {
    if (tau < s.values[p]) {
      bits[p] = 1;
      any = true;
    }
  }
  if (!any) {
    // max_element returns the first maximum, i.e. row-major tie-breaking.
    bits[std::max_element(s.values.begin(), s.values.end()) - s.values.begin()] = 1;
  }
  return bits;
}

BinaryMask threshold_mask(const SaliencyMap& s, double tau, int out_w, int out_h) {
  const std::vector<std::uint8_t> patches = patch_mask(s, tau);
  if (out_w < s.cols || out_h < s.rows)
    throw InvalidInput("threshold_mask: output " + std::to_string(out_w) + "x" + std::to_string(out_h) +
                       " is smaller than the patch grid");
  BinaryMask m;
  m.width = out_w;
  m.height = out_h;
  m.bits.resize(static_cast<std::size_t>(out_w) * out_h);
  for (int y = 0; y < out_h; ++y) {
    const int r = block_index(y, out_h, s.rows);
    for (int x = 0; x < out_w; ++x)
      m.bits[static_cast<std::size_t>(y) * out_w + x] = patches[static_cast<std::size_t>(r) * s.cols +
                                                                 block_index(x, out_w, s.cols)];
  }
  return m;
}

MaskedImage apply_mask(const Image& img, const BinaryMask& m) {
  if (img.width != m.width || img.height != m.height)
    throw InvalidInput("apply_mask: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       " but mask is " + std::to_string(m.width) + "x" + std::to_string(m.height));
  MaskedImage out = img;
  for (std::size_t p = 0; p < m.bits.size(); ++p)
    for (int c = 0; c < Image::channels; ++c) out.pixels[p * Image::channels + c] *= m.bits[p];
  return out;
}

}  // namespace a2t
