#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "icot/decoder.hpp"
#include "icot/error.hpp"
#include "icot/image.hpp"
#include "icot/model.hpp"
#include "icot/tokens.hpp"
#include "json.hpp"

namespace icot::prompting {

struct PromptTemplate {
  std::string preamble{"Look at the image and answer the question.\n"};
  std::string zero_shot_suffix{"Let's think step by step"};

  void validate() const {
    if (preamble.empty()) {
      throw UsageError("prompt template preamble must not be empty");
    }
  }
};

struct TextSegment {
  std::string text;
  friend bool operator==(const TextSegment&, const TextSegment&) = default;
};

// Hand-picked patches of the demonstration's own image.
struct ManualSpan {
  std::vector<std::size_t> indices;
  friend bool operator==(const ManualSpan&, const ManualSpan&) = default;
};

using RationaleSegment = std::variant<TextSegment, ManualSpan>;

struct Demonstration {
  Image image;
  std::vector<RationaleSegment> rationale;
  std::string answer;

  [[nodiscard]] std::size_t span_count() const {
    std::size_t n = 0;
    for (const auto& seg : rationale) {
      n += std::holds_alternative<ManualSpan>(seg) ? 1 : 0;
    }
    return n;
  }

  void validate(std::size_t patch_px) const {
    const PatchGrid grid = PatchGrid::for_image(image, patch_px);
    std::size_t span_no = 0;
    for (const auto& seg : rationale) {
      const auto* span = std::get_if<ManualSpan>(&seg);
      if (span == nullptr) {
        continue;
      }
      for (std::size_t k = 0; k < span->indices.size(); ++k) {
        if (span->indices[k] >= grid.patch_count()) {
          throw ValidationError("demonstration span " + std::to_string(span_no) + ": patch index " +
                                std::to_string(span->indices[k]) + " out of range for " +
                                std::to_string(grid.patch_count()) + " patches");
        }
        if (k > 0 && span->indices[k] <= span->indices[k - 1]) {
          throw ValidationError("demonstration span " + std::to_string(span_no) +
                                ": indices must be strictly ascending");
        }
      }
      ++span_no;
    }
  }
};

// [IMG_START, <query image>, IMG_END, question, suffix]
inline ElementSequence query_block(const PromptTemplate& tmpl, std::string_view question) {
  ElementSequence seq;
  seq.emplace_back(TextToken{kImageStart});
  seq.emplace_back(ImagePlaceholder{});
  seq.emplace_back(TextToken{kImageEnd});
  append_text(seq, question);
  append_text(seq, tmpl.zero_shot_suffix);
  return seq;
}

inline ElementSequence assemble_zero_shot(const PromptTemplate& tmpl, std::string_view question) {
  tmpl.validate();
  ElementSequence seq{TextToken{kBos}};
  append_text(seq, tmpl.preamble);
  ElementSequence query = query_block(tmpl, question);
  seq.insert(seq.end(), query.begin(), query.end());
  return seq;
}

// Demonstration image block, rationale with its spans gathered from the
// demonstration image's own encoding, then the answer text.
inline ElementSequence render_demonstration(const Model& model, const Demonstration& demo,
                                            std::size_t patch_px) {
  demo.validate(patch_px);
  const VisualTokenCache visual = model.encode_image(demo.image, patch_px);
  ElementSequence seq;
  seq.emplace_back(TextToken{kImageStart});
  VisualRows whole{visual.tokens, std::vector<std::size_t>(visual.size())};
  for (std::size_t i = 0; i < visual.size(); ++i) {
    whole.patches[i] = i;
  }
  seq.emplace_back(std::move(whole));
  seq.emplace_back(TextToken{kImageEnd});
  for (const auto& seg : demo.rationale) {
    if (const auto* text = std::get_if<TextSegment>(&seg)) {
      append_text(seq, text->text);
    } else {
      const auto& span = std::get<ManualSpan>(seg);
      VisualRows rows{Matrix{}, span.indices};
      for (std::size_t i : span.indices) {
        rows.rows.push_row(visual.tokens.row(i));
      }
      seq.emplace_back(std::move(rows));
    }
  }
  append_text(seq, demo.answer);
  return seq;
}

inline ElementSequence assemble_one_shot(const Model& model, const PromptTemplate& tmpl,
                                         const Demonstration& demo, std::string_view question,
                                         std::size_t patch_px) {
  tmpl.validate();
  ElementSequence demo_part = render_demonstration(model, demo, patch_px);
  ElementSequence seq{TextToken{kBos}};
  append_text(seq, tmpl.preamble);
  seq.insert(seq.end(), demo_part.begin(), demo_part.end());
  ElementSequence query = query_block(tmpl, question);
  seq.insert(seq.end(), query.begin(), query.end());
  return seq;
}

// Converts a generated interleaved sequence into a demonstration: spans become
// manual spans and text after the final span becomes the answer.
inline Demonstration to_demonstration(const Image& image, const InterleavedSequence& seq) {
  Demonstration demo{image, {}, {}};
  std::string pending;
  for (const auto& item : seq.items()) {
    if (const auto* tok = std::get_if<TextToken>(&item)) {
      if (is_byte_token(tok->id)) {
        pending.push_back(static_cast<char>(tok->id));
      }
    } else {
      if (!pending.empty()) {
        demo.rationale.emplace_back(TextSegment{std::move(pending)});
        pending.clear();
      }
      demo.rationale.emplace_back(ManualSpan{std::get<VisualSpan>(item).indices});
    }
  }
  demo.answer = std::move(pending);
  return demo;
}

inline Demonstration bootstrap_demonstration(const Model& model, const Image& image, std::string_view question,
                                             const GenerationConfig& config, const PromptTemplate& tmpl = {}) {
  if (!is_icot(config.mode)) {
    throw UsageError("bootstrap_demonstration requires an icot mode");
  }
  const GenerationResult run = generate(model, image, assemble_zero_shot(tmpl, question), config);
  if (run.sequence.text_tokens().empty()) {
    throw BootstrapError("generation emitted no tokens; nothing to turn into a demonstration");
  }
  return to_demonstration(image, run.sequence);
}

// Demonstration file: {"image": <ppm path>, "rationale": [{"text": ...} |
// {"span": [...]}, ...], "answer": ...}. Relative image paths resolve against
// the file's directory.
inline Demonstration load_demonstration(const std::filesystem::path& path) {
  std::ifstream in{path};
  if (!in) {
    throw FormatError("cannot open demonstration file '" + path.string() + "'");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("demonstration '" + path.string() + "': " + e.what());
  }
  Demonstration demo;
  try {
    std::filesystem::path image_path = doc.at("image").get<std::string>();
    if (image_path.is_relative()) {
      image_path = path.parent_path() / image_path;
    }
    demo.image = read_ppm(image_path);
    for (const auto& item : doc.at("rationale")) {
      const bool has_text = item.contains("text");
      const bool has_span = item.contains("span");
      if (has_text == has_span) {
        throw FormatError("rationale entries need exactly one of \"text\" or \"span\"");
      }
      if (has_text) {
        demo.rationale.emplace_back(TextSegment{item.at("text").get<std::string>()});
      } else {
        ManualSpan span{item.at("span").get<std::vector<std::size_t>>()};
        for (std::size_t k = 1; k < span.indices.size(); ++k) {
          if (span.indices[k] <= span.indices[k - 1]) {
            throw ValidationError("span indices must be strictly ascending");
          }
        }
        demo.rationale.emplace_back(std::move(span));
      }
    }
    demo.answer = doc.at("answer").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("demonstration '" + path.string() + "': " + e.what());
  }
  return demo;
}

inline nlohmann::ordered_json demonstration_to_json(const Demonstration& demo, const std::string& image_ref) {
  nlohmann::ordered_json rationale = nlohmann::ordered_json::array();
  for (const auto& seg : demo.rationale) {
    if (const auto* text = std::get_if<TextSegment>(&seg)) {
      rationale.push_back({{"text", text->text}});
    } else {
      rationale.push_back({{"span", std::get<ManualSpan>(seg).indices}});
    }
  }
  return {{"image", image_ref}, {"rationale", rationale}, {"answer", demo.answer}};
}

}  // namespace icot::prompting
