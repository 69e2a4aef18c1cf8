#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "icot/matrix.hpp"

namespace icot {

using TokenId = std::uint32_t;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by four specials.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kImageStart = 258;
inline constexpr TokenId kImageEnd = 259;
inline constexpr std::size_t kVocabSize = 260;

inline constexpr TokenId kLineBreak = 0x0A;

[[nodiscard]] constexpr bool is_byte_token(TokenId id) noexcept { return id < 256; }

struct TextToken {
  TokenId id{0};
  friend bool operator==(const TextToken&, const TextToken&) = default;
};

// Marks where the query image's visual tokens are spliced in at generation time.
struct ImagePlaceholder {
  friend bool operator==(const ImagePlaceholder&, const ImagePlaceholder&) = default;
};

// Pre-computed embeddings fed to the model verbatim, one position per row.
// `patches` records which grid patches the rows came from (for spans).
struct VisualRows {
  Matrix rows;
  std::vector<std::size_t> patches;
  friend bool operator==(const VisualRows&, const VisualRows&) = default;
};

using Element = std::variant<TextToken, ImagePlaceholder, VisualRows>;
using ElementSequence = std::vector<Element>;

inline void append_text(ElementSequence& seq, std::string_view text) {
  for (unsigned char c : text) {
    seq.emplace_back(TextToken{c});
  }
}

inline std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) {
    ids.push_back(c);
  }
  return ids;
}

// Bytes of all byte tokens in order; specials and visual rows are skipped.
template <typename Range>
std::string detokenize(const Range& ids) {
  std::string out;
  for (TokenId id : ids) {
    if (is_byte_token(id)) {
      out.push_back(static_cast<char>(id));
    }
  }
  return out;
}

inline std::string detokenize(const ElementSequence& seq) {
  std::string out;
  for (const Element& e : seq) {
    if (const auto* t = std::get_if<TextToken>(&e); t != nullptr && is_byte_token(t->id)) {
      out.push_back(static_cast<char>(t->id));
    }
  }
  return out;
}

// Number of model positions the sequence occupies once placeholders are
// resolved to `placeholder_rows` rows.
inline std::size_t position_count(const ElementSequence& seq, std::size_t placeholder_rows) {
  std::size_t n = 0;
  for (const Element& e : seq) {
    if (std::holds_alternative<TextToken>(e)) {
      ++n;
    } else if (std::holds_alternative<ImagePlaceholder>(e)) {
      n += placeholder_rows;
    } else {
      n += std::get<VisualRows>(e).rows.rows();
    }
  }
  return n;
}

}  // namespace icot
