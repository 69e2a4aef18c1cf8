#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "icot/error.hpp"
#include "icot/image.hpp"
#include "icot/matrix.hpp"
#include "icot/rng.hpp"
#include "icot/tokens.hpp"

namespace icot {

inline constexpr std::uint64_t kDefaultSeed = 194;

struct ModelConfig {
  std::size_t d{16};
  std::size_t n_layers{2};
  std::size_t n_heads{2};
  std::size_t max_positions{4096};
  std::uint64_t seed{kDefaultSeed};
  bool use_positional_encoding{true};
};

// Visual tokens of one image, cached once at prefill and never modified.
struct VisualTokenCache {
  PatchGrid grid;
  Matrix tokens;  // patch_count x d, row-major patch order

  [[nodiscard]] std::size_t size() const noexcept { return tokens.rows(); }
};

struct KvEntry {
  std::vector<double> key;
  std::vector<double> value;
  std::size_t position{0};  // position id the entry was computed at

  friend bool operator==(const KvEntry&, const KvEntry&) = default;
};

// Per-layer key/value history. Grows by forwarding positions through a Model
// or by duplicating existing entries with copy_entries().
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(std::size_t n_layers) : layers_(n_layers) {}

  [[nodiscard]] std::size_t n_layers() const noexcept { return layers_.size(); }
  [[nodiscard]] std::size_t length() const noexcept {
    return layers_.empty() ? 0 : layers_.front().size();
  }
  // Positions that went through a full forward pass (prefill + decode + appends).
  [[nodiscard]] std::size_t forwarded_positions() const noexcept { return forwarded_; }

  [[nodiscard]] const std::vector<KvEntry>& layer(std::size_t l) const { return layers_.at(l); }

  // Duplicates the entries at `positions` (cache indices) onto the end of
  // every layer, in the given order. No forward pass happens.
  void copy_entries(std::span<const std::size_t> positions) {
    const std::size_t len = length();
    for (std::size_t p : positions) {
      if (p >= len) {
        throw IndexError("kv_copy: position " + std::to_string(p) + " out of range for cache of length " +
                         std::to_string(len));
      }
    }
    for (auto& entries : layers_) {
      entries.reserve(entries.size() + positions.size());
      for (std::size_t p : positions) {
        KvEntry copy = entries[p];
        entries.push_back(std::move(copy));
      }
    }
  }

  friend bool operator==(const KVCache&, const KVCache&) = default;

 private:
  friend class Model;

  std::vector<std::vector<KvEntry>> layers_;
  std::size_t forwarded_{0};
};

inline void kv_copy(KVCache& cache, std::span<const std::size_t> positions) {
  cache.copy_entries(positions);
}

// Attention of a single query position over every key in the cache, for each
// layer and head.
class AttentionRecord {
 public:
  AttentionRecord() = default;
  AttentionRecord(std::size_t n_layers, std::size_t n_heads, std::size_t key_count)
      : n_layers_{n_layers},
        n_heads_{n_heads},
        key_count_{key_count},
        weights_(n_layers * n_heads * key_count, 0.0) {}

  [[nodiscard]] std::size_t n_layers() const noexcept { return n_layers_; }
  [[nodiscard]] std::size_t n_heads() const noexcept { return n_heads_; }
  [[nodiscard]] std::size_t key_count() const noexcept { return key_count_; }

  std::span<double> row(std::size_t layer, std::size_t head) noexcept {
    return {weights_.data() + (layer * n_heads_ + head) * key_count_, key_count_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t layer, std::size_t head) const noexcept {
    return {weights_.data() + (layer * n_heads_ + head) * key_count_, key_count_};
  }

  friend bool operator==(const AttentionRecord&, const AttentionRecord&) = default;

 private:
  std::size_t n_layers_{0};
  std::size_t n_heads_{0};
  std::size_t key_count_{0};
  std::vector<double> weights_;
};

// Greedy choice; ties go to the lowest token id.
inline TokenId greedy_argmax(std::span<const double> logits) {
  if (logits.empty()) {
    throw UsageError("argmax over empty logits");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) {
      best = i;
    }
  }
  return static_cast<TokenId>(best);
}

struct StepOutput {
  std::vector<double> logits;
  AttentionRecord attention;

  [[nodiscard]] TokenId next_token() const { return greedy_argmax(logits); }
};

struct PrefillResult {
  KVCache cache;
  StepOutput output;
};

// Small pre-norm decoder-only transformer over a byte vocabulary with a
// linear patch encoder. Immutable after construction; all methods are const
// and may be called from many threads over distinct caches.
class Model {
 public:
  explicit Model(ModelConfig config = {}) : config_{config} {
    if (config_.d == 0 || config_.n_layers == 0 || config_.n_heads == 0) {
      throw UsageError("model dimensions must be positive");
    }
    if (config_.d % config_.n_heads != 0) {
      throw UsageError("embedding width " + std::to_string(config_.d) + " not divisible by " +
                       std::to_string(config_.n_heads) + " heads");
    }
    SplitMix64 rng{config_.seed};
    const std::size_t d = config_.d;
    token_embedding_ = random_matrix(rng, kVocabSize, d);
    position_embedding_ = random_matrix(rng, config_.max_positions, d);
    layers_.reserve(config_.n_layers);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      Layer layer;
      layer.wq = random_matrix(rng, d, d);
      layer.wk = random_matrix(rng, d, d);
      layer.wv = random_matrix(rng, d, d);
      layer.wo = random_matrix(rng, d, d);
      layer.w_up = random_matrix(rng, kMlpExpansion * d, d);
      layer.w_down = random_matrix(rng, d, kMlpExpansion * d);
      layers_.push_back(std::move(layer));
    }
    unembedding_ = random_matrix(rng, kVocabSize, d);
  }

  [[nodiscard]] const ModelConfig& config() const noexcept { return config_; }
  [[nodiscard]] std::size_t width() const noexcept { return config_.d; }

  [[nodiscard]] std::span<const double> token_embedding(TokenId id) const {
    if (id >= kVocabSize) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return token_embedding_.row(id);
  }

  // Projection from a flattened patch (RGB in [0,1], row-major within the
  // patch) to the model width. Derived from the seed per patch size.
  [[nodiscard]] Matrix patch_projection(std::size_t patch_px) const {
    SplitMix64 rng{derive_seed(config_.seed, 0x7061746368ULL + patch_px)};
    return random_matrix(rng, config_.d, 3 * patch_px * patch_px);
  }

  [[nodiscard]] VisualTokenCache encode_image(const Image& image, std::size_t patch_px) const {
    const PatchGrid grid = PatchGrid::for_image(image, patch_px);
    const Matrix projection = patch_projection(patch_px);
    VisualTokenCache cache{grid, Matrix{grid.patch_count(), config_.d}};
    std::vector<double> flat(3 * patch_px * patch_px);
    for (std::size_t pr = 0; pr < grid.patch_rows; ++pr) {
      for (std::size_t pc = 0; pc < grid.patch_cols; ++pc) {
        std::size_t k = 0;
        for (std::size_t y = 0; y < patch_px; ++y) {
          for (std::size_t x = 0; x < patch_px; ++x) {
            const Rgb px = image.at(pc * patch_px + x, pr * patch_px + y);
            flat[k++] = px.r / 255.0;
            flat[k++] = px.g / 255.0;
            flat[k++] = px.b / 255.0;
          }
        }
        matvec(projection, flat, cache.tokens.row(grid.linear_index(pr, pc)));
      }
    }
    return cache;
  }

  // Forwards every element of a resolved prompt. The returned output belongs
  // to the final position.
  [[nodiscard]] PrefillResult prefill(const ElementSequence& elements) const {
    if (elements.empty()) {
      throw UsageError("prefill: empty input");
    }
    const auto* first = std::get_if<TextToken>(&elements.front());
    if (first == nullptr || first->id != kBos) {
      throw UsageError("prefill: input must begin with BOS");
    }
    KVCache cache{config_.n_layers};
    std::optional<StepOutput> last;
    for (const Element& e : elements) {
      if (const auto* tok = std::get_if<TextToken>(&e)) {
        last = forward(cache, token_embedding(tok->id));
      } else if (const auto* rows = std::get_if<VisualRows>(&e)) {
        if (auto out = append_embeddings(cache, rows->rows)) {
          last = std::move(out);
        }
      } else {
        throw UsageError("prefill: unresolved image placeholder");
      }
    }
    return {std::move(cache), std::move(*last)};
  }

  // Feeds one token and returns the prediction for the following position.
  StepOutput decode_step(KVCache& cache, TokenId token) const {
    return forward(cache, token_embedding(token));
  }

  // Forwards each row as a new position. Returns the output of the last row,
  // or nothing when `embeddings` is empty.
  std::optional<StepOutput> append_embeddings(KVCache& cache, const Matrix& embeddings) const {
    if (embeddings.rows() > 0 && embeddings.cols() != config_.d) {
      throw GeometryError("embedding width " + std::to_string(embeddings.cols()) +
                          " does not match model width " + std::to_string(config_.d));
    }
    std::optional<StepOutput> out;
    for (std::size_t r = 0; r < embeddings.rows(); ++r) {
      out = forward(cache, embeddings.row(r));
    }
    return out;
  }

  // One position through the network. The new position id is the current
  // cache length; copied entries therefore shift later ids forward.
  StepOutput forward(KVCache& cache, std::span<const double> input) const {
    const std::size_t d = config_.d;
    if (input.size() != d) {
      throw GeometryError("input width " + std::to_string(input.size()) + " does not match model width " +
                          std::to_string(d));
    }
    if (cache.n_layers() != config_.n_layers) {
      throw UsageError("cache layer count does not match model");
    }
    const std::size_t position = cache.length();
    if (position >= config_.max_positions) {
      throw UsageError("sequence exceeds " + std::to_string(config_.max_positions) + " positions");
    }

    std::vector<double> x(input.begin(), input.end());
    if (config_.use_positional_encoding) {
      const auto pos = position_embedding_.row(position);
      for (std::size_t i = 0; i < d; ++i) {
        x[i] += pos[i];
      }
    }

    const std::size_t heads = config_.n_heads;
    const std::size_t head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    AttentionRecord record{config_.n_layers, heads, position + 1};

    std::vector<double> h(d);
    std::vector<double> attn(d);
    std::vector<double> proj(d);
    std::vector<double> hidden(kMlpExpansion * d);
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
      const Layer& layer = layers_[l];
      rms_norm(x, h);
      KvEntry entry{std::vector<double>(d), std::vector<double>(d), position};
      std::vector<double> q(d);
      matvec(layer.wq, h, q);
      matvec(layer.wk, h, entry.key);
      matvec(layer.wv, h, entry.value);
      auto& entries = cache.layers_[l];
      entries.push_back(std::move(entry));

      std::fill(attn.begin(), attn.end(), 0.0);
      for (std::size_t head = 0; head < heads; ++head) {
        const std::size_t off = head * head_dim;
        auto weights = record.row(l, head);
        double max_score = -INFINITY;
        for (std::size_t j = 0; j < entries.size(); ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < head_dim; ++i) {
            s += q[off + i] * entries[j].key[off + i];
          }
          weights[j] = s * scale;
          max_score = std::max(max_score, weights[j]);
        }
        double total = 0.0;
        for (double& w : weights) {
          w = std::exp(w - max_score);
          total += w;
        }
        for (std::size_t j = 0; j < entries.size(); ++j) {
          weights[j] /= total;
          for (std::size_t i = 0; i < head_dim; ++i) {
            attn[off + i] += weights[j] * entries[j].value[off + i];
          }
        }
      }
      matvec(layer.wo, attn, proj);
      for (std::size_t i = 0; i < d; ++i) {
        x[i] += proj[i];
      }

      rms_norm(x, h);
      matvec(layer.w_up, h, hidden);
      for (double& v : hidden) {
        v = gelu(v);
      }
      matvec(layer.w_down, hidden, proj);
      for (std::size_t i = 0; i < d; ++i) {
        x[i] += proj[i];
      }
    }
    ++cache.forwarded_;

    rms_norm(x, h);
    StepOutput out{std::vector<double>(kVocabSize), std::move(record)};
    matvec(unembedding_, h, out.logits);
    for (double v : out.logits) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite logit at position " + std::to_string(position));
      }
    }
    return out;
  }

 private:
  static constexpr std::size_t kMlpExpansion = 4;
  static constexpr double kWeightRange = 0.1;
  static constexpr double kNormEps = 1e-5;

  struct Layer {
    Matrix wq, wk, wv, wo;
    Matrix w_up, w_down;
  };

  static Matrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols) {
    Matrix m{rows, cols};
    for (double& v : m.data()) {
      v = rng.uniform(-kWeightRange, kWeightRange);
    }
    return m;
  }

  static void matvec(const Matrix& w, std::span<const double> x, std::span<double> y) {
    for (std::size_t r = 0; r < w.rows(); ++r) {
      const auto row = w.row(r);
      double acc = 0.0;
      for (std::size_t c = 0; c < row.size(); ++c) {
        acc += row[c] * x[c];
      }
      y[r] = acc;
    }
  }

  static void rms_norm(std::span<const double> x, std::span<double> y) {
    double ss = 0.0;
    for (double v : x) {
      ss += v * v;
    }
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = x[i] * inv;
    }
  }

  static double gelu(double v) {
    constexpr double kSqrt2OverPi = 0.7978845608028654;
    return 0.5 * v * (1.0 + std::tanh(kSqrt2OverPi * (v + 0.044715 * v * v * v)));
  }

  ModelConfig config_;
  Matrix token_embedding_;
  Matrix position_embedding_;
  std::vector<Layer> layers_;
  Matrix unembedding_;
};

}  // namespace icot
