#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "icot/error.hpp"
#include "icot/matrix.hpp"
#include "icot/model.hpp"

namespace icot::ads {

// Signal-token attention restricted to the cached visual tokens, one score
// per visual token.
struct SignalAttention {
  std::vector<double> scores;

  void validate() const {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!std::isfinite(scores[i]) || scores[i] < 0.0) {
        throw InvariantError("signal attention score " + std::to_string(i) + " is negative or non-finite");
      }
    }
  }
};

struct SelectionResult {
  std::vector<std::size_t> indices;  // ascending patch indices
  std::vector<double> scores;        // score of each selected index
  Matrix embeddings;                 // rows gathered from the visual cache
};

// Uniform mean over every layer and head of the attention weight from the
// query to each visual position. Not renormalized after the restriction.
inline SignalAttention signal_attention(const AttentionRecord& record,
                                        std::span<const std::size_t> visual_positions) {
  for (std::size_t p : visual_positions) {
    if (p >= record.key_count()) {
      throw IndexError("visual position " + std::to_string(p) + " beyond attention record of " +
                       std::to_string(record.key_count()) + " keys");
    }
  }
  SignalAttention out{std::vector<double>(visual_positions.size(), 0.0)};
  const std::size_t rows = record.n_layers() * record.n_heads();
  if (rows == 0) {
    return out;
  }
  for (std::size_t l = 0; l < record.n_layers(); ++l) {
    for (std::size_t h = 0; h < record.n_heads(); ++h) {
      const auto row = record.row(l, h);
      for (std::size_t j = 0; j < visual_positions.size(); ++j) {
        out.scores[j] += row[visual_positions[j]];
      }
    }
  }
  for (double& s : out.scores) {
    s /= static_cast<double>(rows);
  }
  return out;
}

// Indices of the min(n, size) largest scores, lower index winning ties,
// returned in ascending index order.
template <typename Scores>
std::vector<std::size_t> top_k(const Scores& scores, std::size_t n) {
  if (n == 0) {
    throw UsageError("top_k: selection count must be at least 1");
  }
  const std::size_t l = std::size(scores);
  const std::size_t k = std::min(n, l);
  std::vector<std::size_t> order(l);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) {
                        return scores[a] > scores[b];
                      }
                      return a < b;
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

inline std::vector<std::size_t> top_k(const SignalAttention& attention, std::size_t n) {
  attention.validate();
  return top_k(attention.scores, n);
}

// Puts selected patches back in their original image order. Row-major
// linear indices make ascending order the same as row-first order.
inline std::vector<std::size_t> restore_order(std::vector<std::size_t> indices) {
  std::sort(indices.begin(), indices.end());
  if (std::adjacent_find(indices.begin(), indices.end()) != indices.end()) {
    throw InvariantError("restore_order: duplicate patch index");
  }
  return indices;
}

inline SelectionResult select(const VisualTokenCache& cache, const AttentionRecord& record,
                              std::span<const std::size_t> visual_positions, std::size_t n) {
  if (visual_positions.size() != cache.size()) {
    throw UsageError("select: " + std::to_string(visual_positions.size()) + " visual positions for " +
                     std::to_string(cache.size()) + " cached visual tokens");
  }
  const SignalAttention attention = signal_attention(record, visual_positions);
  SelectionResult result;
  result.indices = restore_order(top_k(attention, n));
  result.scores.reserve(result.indices.size());
  for (std::size_t i : result.indices) {
    result.scores.push_back(attention.scores[i]);
    result.embeddings.push_row(cache.tokens.row(i));
  }
  return result;
}

// Rescales a selection count tuned for one patch size to another so the
// selected pixel area stays roughly constant, then rounds down to a power of
// two. (64, 16, 28) -> 16.
inline std::size_t scale_selection_count(std::size_t n_base, std::size_t base_patch_px,
                                         std::size_t target_patch_px) {
  if (n_base == 0 || base_patch_px == 0 || target_patch_px == 0) {
    throw UsageError("scale_selection_count: arguments must be at least 1");
  }
  const std::size_t scaled =
      n_base * base_patch_px * base_patch_px / (target_patch_px * target_patch_px);
  return std::max<std::size_t>(1, std::bit_floor(scaled));
}

}  // namespace icot::ads
