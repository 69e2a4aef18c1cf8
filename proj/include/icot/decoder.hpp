#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "icot/ads.hpp"
#include "icot/error.hpp"
#include "icot/image.hpp"
#include "icot/model.hpp"
#include "icot/tokens.hpp"

namespace icot {

// no_cot and text_cot decode identically; they differ only in the prompt
// the caller assembles. The icot modes realize insertion either by
// forwarding the selected embeddings or by duplicating their KV entries.
enum class Mode { no_cot, text_cot, icot_insert, icot_kv_copy };

[[nodiscard]] constexpr bool is_icot(Mode m) noexcept {
  return m == Mode::icot_insert || m == Mode::icot_kv_copy;
}

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::no_cot:
      return "no_cot";
    case Mode::text_cot:
      return "text_cot";
    case Mode::icot_insert:
      return "icot_insert";
    case Mode::icot_kv_copy:
      return "icot_kv_copy";
  }
  return "unknown";
}

inline Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::no_cot, Mode::text_cot, Mode::icot_insert, Mode::icot_kv_copy}) {
    if (mode_name(m) == name) {
      return m;
    }
  }
  throw UsageError("unknown mode '" + std::string{name} +
                   "' (expected no_cot, text_cot, icot_insert or icot_kv_copy)");
}

struct GenerationConfig {
  Mode mode{Mode::icot_insert};
  std::size_t n{64};
  std::set<TokenId> signal_set{kLineBreak};
  std::size_t max_new_tokens{64};
  std::size_t max_insertions{8};
  std::size_t min_tokens_between_insertions{4};
  std::size_t patch_px{8};
  // Keep decoding through EOS; runs then always emit max_new_tokens tokens.
  bool ignore_eos{false};

  void validate() const {
    if (is_icot(mode) && n == 0) {
      throw UsageError("selection count n must be at least 1 in icot modes");
    }
    if (max_new_tokens == 0) {
      throw UsageError("max_new_tokens must be at least 1");
    }
    if (patch_px == 0) {
      throw UsageError("patch_px must be at least 1");
    }
  }
};

struct VisualSpan {
  std::vector<std::size_t> indices;
  Matrix embeddings;
  std::size_t step{0};  // decode step of the signal token that triggered it
};

// Generated output: text tokens interleaved with inserted visual spans.
class InterleavedSequence {
 public:
  using Item = std::variant<TextToken, VisualSpan>;

  void push_token(TokenId id) {
    items_.emplace_back(TextToken{id});
    ++tokens_since_span_;
  }

  void push_span(VisualSpan span) {
    items_.emplace_back(std::move(span));
    ++span_count_;
    tokens_since_span_ = 0;
  }

  [[nodiscard]] const std::vector<Item>& items() const noexcept { return items_; }
  [[nodiscard]] std::size_t span_count() const noexcept { return span_count_; }
  [[nodiscard]] std::size_t tokens_since_last_span() const noexcept { return tokens_since_span_; }

  [[nodiscard]] std::vector<TokenId> text_tokens() const {
    std::vector<TokenId> out;
    for (const Item& item : items_) {
      if (const auto* t = std::get_if<TextToken>(&item)) {
        out.push_back(t->id);
      }
    }
    return out;
  }

  [[nodiscard]] std::vector<const VisualSpan*> spans() const {
    std::vector<const VisualSpan*> out;
    for (const Item& item : items_) {
      if (const auto* s = std::get_if<VisualSpan>(&item)) {
        out.push_back(s);
      }
    }
    return out;
  }

  // Text after the final span, or all text when nothing was inserted.
  [[nodiscard]] std::vector<TokenId> answer_tokens() const {
    std::vector<TokenId> out;
    for (const Item& item : items_) {
      if (std::holds_alternative<VisualSpan>(item)) {
        out.clear();
      } else {
        out.push_back(std::get<TextToken>(item).id);
      }
    }
    return out;
  }

  [[nodiscard]] std::string answer_text() const { return detokenize(answer_tokens()); }

 private:
  std::vector<Item> items_;
  std::size_t span_count_{0};
  std::size_t tokens_since_span_{0};
};

struct TokenEmitted {
  std::size_t step{0};
  TokenId id{0};
};

struct SelectionTriggered {
  std::size_t step{0};
  TokenId signal{0};
  std::vector<std::size_t> indices;
  std::vector<double> scores;
};

struct SpanInserted {
  std::size_t step{0};
  Mode mode{Mode::icot_insert};
  std::size_t rows{0};
};

enum class StopReason { eos, max_tokens };

struct Stopped {
  StopReason reason{StopReason::max_tokens};
};

using TraceEvent = std::variant<TokenEmitted, SelectionTriggered, SpanInserted, Stopped>;

struct GenerationTrace {
  std::vector<TraceEvent> events;
  std::size_t forwarded_positions{0};
  std::size_t kv_copied_entries{0};

  template <typename Event>
  [[nodiscard]] std::vector<const Event*> of_type() const {
    std::vector<const Event*> out;
    for (const TraceEvent& e : events) {
      if (const auto* p = std::get_if<Event>(&e)) {
        out.push_back(p);
      }
    }
    return out;
  }
};

struct GenerationResult {
  InterleavedSequence sequence;
  GenerationTrace trace;
  std::vector<TokenId> emitted;  // every token produced, including a final EOS
  KVCache cache;
  VisualTokenCache visual;
  std::vector<std::size_t> visual_positions;  // cache positions of the query image
  std::vector<std::size_t> span_offsets;      // cache position where each span starts
  std::size_t prompt_positions{0};
};

using EventHook = std::function<void(const TraceEvent&)>;

// Eq. 4 gate plus the insertion budget and cooldown. `state` already holds
// `last_token`.
inline bool should_select(TokenId last_token, const GenerationConfig& config,
                          const InterleavedSequence& state) {
  if (!is_icot(config.mode) || !config.signal_set.contains(last_token)) {
    return false;
  }
  if (state.span_count() >= config.max_insertions) {
    return false;
  }
  return state.span_count() == 0 ||
         state.tokens_since_last_span() >= config.min_tokens_between_insertions;
}

namespace detail {

struct ResolvedPrompt {
  ElementSequence elements;
  std::vector<std::size_t> visual_positions;
};

inline ResolvedPrompt resolve_prompt(const ElementSequence& prompt, const VisualTokenCache& visual) {
  ResolvedPrompt out;
  std::size_t position = 0;
  std::size_t placeholders = 0;
  out.elements.reserve(prompt.size());
  for (const Element& e : prompt) {
    if (std::holds_alternative<ImagePlaceholder>(e)) {
      ++placeholders;
      VisualRows rows{visual.tokens, std::vector<std::size_t>(visual.size())};
      for (std::size_t i = 0; i < visual.size(); ++i) {
        rows.patches[i] = i;
        out.visual_positions.push_back(position + i);
      }
      position += visual.size();
      out.elements.emplace_back(std::move(rows));
    } else {
      position += std::holds_alternative<TextToken>(e) ? 1 : std::get<VisualRows>(e).rows.rows();
      out.elements.push_back(e);
    }
  }
  if (placeholders != 1) {
    throw UsageError("prompt must reference the image exactly once, found " + std::to_string(placeholders) +
                     " placeholders");
  }
  return out;
}

}  // namespace detail

// Greedy decoding with attention-driven insertion of image patches after
// every signal token. The selection uses the attention of the signal token
// itself as the query, computed when it is fed back into the model.
inline GenerationResult generate(const Model& model, const Image& image, const ElementSequence& prompt,
                                 const GenerationConfig& config, const EventHook& hook = {}) {
  config.validate();
  GenerationResult result;
  result.visual = model.encode_image(image, config.patch_px);
  detail::ResolvedPrompt resolved = detail::resolve_prompt(prompt, result.visual);
  result.visual_positions = std::move(resolved.visual_positions);

  auto record = [&](TraceEvent event) {
    if (hook) {
      hook(event);
    }
    result.trace.events.push_back(std::move(event));
  };

  std::size_t step = 0;
  try {
    PrefillResult pre = model.prefill(resolved.elements);
    result.cache = std::move(pre.cache);
    result.prompt_positions = result.cache.length();
    StepOutput out = std::move(pre.output);

    for (step = 0;; ++step) {
      const TokenId token = out.next_token();
      result.emitted.push_back(token);
      record(TokenEmitted{step, token});
      if (token == kEos && !config.ignore_eos) {
        record(Stopped{StopReason::eos});
        break;
      }
      result.sequence.push_token(token);
      if (step + 1 >= config.max_new_tokens) {
        record(Stopped{StopReason::max_tokens});
        break;
      }

      out = model.decode_step(result.cache, token);
      if (!should_select(token, config, result.sequence)) {
        continue;
      }

      ads::SelectionResult sel = ads::select(result.visual, out.attention, result.visual_positions, config.n);
      record(SelectionTriggered{step, token, sel.indices, sel.scores});
      result.span_offsets.push_back(result.cache.length());
      const std::size_t rows = sel.indices.size();
      if (config.mode == Mode::icot_insert) {
        if (auto appended = model.append_embeddings(result.cache, sel.embeddings)) {
          out = std::move(*appended);
        }
      } else {
        // Copied entries keep their prefill position ids; the next token is
        // still predicted from the signal token's own output.
        std::vector<std::size_t> positions;
        positions.reserve(rows);
        for (std::size_t i : sel.indices) {
          positions.push_back(result.visual_positions[i]);
        }
        kv_copy(result.cache, positions);
        result.trace.kv_copied_entries += rows * result.cache.n_layers();
      }
      result.sequence.push_span(VisualSpan{std::move(sel.indices), std::move(sel.embeddings), step});
      record(SpanInserted{step, config.mode, rows});
    }
  } catch (const NumericError& e) {
    throw NumericError("generation step " + std::to_string(step) + ": " + e.what());
  }
  result.trace.forwarded_positions = result.cache.forwarded_positions();
  return result;
}

struct ArmCost {
  std::size_t emitted{0};
  std::size_t insertions{0};
  std::size_t forwarded_positions{0};
  std::size_t kv_copied_entries{0};
};

struct DivergenceReport {
  std::optional<std::size_t> first_divergence;  // first emitted-token index that differs
  ArmCost insert;
  ArmCost kv_copy;
  // Max |difference| of first-layer keys/values at inserted vs copied
  // positions, over spans both arms inserted at the same step with the same
  // indices.
  std::optional<double> layer1_delta;
  std::size_t compared_spans{0};
};

inline ArmCost arm_cost(const GenerationResult& r) {
  return ArmCost{r.emitted.size(), r.sequence.span_count(), r.trace.forwarded_positions,
                 r.trace.kv_copied_entries};
}

// Maximum absolute first-layer K/V difference between the spans two runs
// inserted at matching steps with matching indices.
inline std::optional<double> layer1_span_delta(const GenerationResult& a, const GenerationResult& b,
                                               std::size_t* compared = nullptr) {
  const auto spans_a = a.sequence.spans();
  const auto spans_b = b.sequence.spans();
  std::optional<double> delta;
  std::size_t count = 0;
  for (std::size_t i = 0; i < spans_a.size(); ++i) {
    for (std::size_t j = 0; j < spans_b.size(); ++j) {
      if (spans_a[i]->step != spans_b[j]->step || spans_a[i]->indices != spans_b[j]->indices) {
        continue;
      }
      ++count;
      double worst = delta.value_or(0.0);
      for (std::size_t r = 0; r < spans_a[i]->indices.size(); ++r) {
        const KvEntry& ea = a.cache.layer(0).at(a.span_offsets[i] + r);
        const KvEntry& eb = b.cache.layer(0).at(b.span_offsets[j] + r);
        for (std::size_t c = 0; c < ea.key.size(); ++c) {
          worst = std::max(worst, std::abs(ea.key[c] - eb.key[c]));
          worst = std::max(worst, std::abs(ea.value[c] - eb.value[c]));
        }
      }
      delta = worst;
    }
  }
  if (compared != nullptr) {
    *compared = count;
  }
  return delta;
}

// Runs the insert and KV-copy realizations side by side on identical inputs.
inline DivergenceReport compare_modes(const Model& model, const Image& image, const ElementSequence& prompt,
                                      GenerationConfig config) {
  config.mode = Mode::icot_insert;
  const GenerationResult inserted = generate(model, image, prompt, config);
  config.mode = Mode::icot_kv_copy;
  const GenerationResult copied = generate(model, image, prompt, config);

  DivergenceReport report;
  report.insert = arm_cost(inserted);
  report.kv_copy = arm_cost(copied);
  const std::size_t common = std::min(inserted.emitted.size(), copied.emitted.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (inserted.emitted[i] != copied.emitted[i]) {
      report.first_divergence = i;
      break;
    }
  }
  if (!report.first_divergence && inserted.emitted.size() != copied.emitted.size()) {
    report.first_divergence = common;
  }
  report.layer1_delta = layer1_span_delta(inserted, copied, &report.compared_spans);
  return report;
}

}  // namespace icot
