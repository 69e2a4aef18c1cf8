#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "icot/decoder.hpp"
#include "icot/error.hpp"
#include "icot/image.hpp"
#include "json.hpp"

namespace icot::overlay {

struct OverlaySpec {
  double dim_factor{0.3};  // applied to every channel of unselected patches
  bool border{false};      // blacken the outer ring of unselected patches

  void validate() const {
    if (!(dim_factor > 0.0 && dim_factor <= 1.0)) {
      throw UsageError("dim_factor must lie in (0, 1]");
    }
  }
};

// Keeps selected patches untouched and darkens everything else.
inline Image render_overlay(const Image& image, const PatchGrid& grid, std::span<const std::size_t> indices,
                            const OverlaySpec& spec = {}) {
  spec.validate();
  if (grid.image_w != image.width() || grid.image_h != image.height()) {
    throw GeometryError("grid " + std::to_string(grid.image_w) + "x" + std::to_string(grid.image_h) +
                        " does not match image " + std::to_string(image.width()) + "x" +
                        std::to_string(image.height()));
  }
  std::vector<bool> selected(grid.patch_count(), false);
  for (std::size_t i : indices) {
    if (i >= grid.patch_count()) {
      throw IndexError("overlay: patch index " + std::to_string(i) + " out of range for " +
                       std::to_string(grid.patch_count()) + " patches");
    }
    selected[i] = true;
  }
  auto dim = [&](std::uint8_t c) {
    return static_cast<std::uint8_t>(std::floor(spec.dim_factor * static_cast<double>(c)));
  };
  Image out = image;
  for (std::size_t y = 0; y < image.height(); ++y) {
    for (std::size_t x = 0; x < image.width(); ++x) {
      if (selected[grid.patch_of_pixel(x, y)]) {
        continue;
      }
      Rgb& px = out.at(x, y);
      const std::size_t lx = x % grid.patch_px;
      const std::size_t ly = y % grid.patch_px;
      const bool edge = lx == 0 || ly == 0 || lx + 1 == grid.patch_px || ly + 1 == grid.patch_px;
      if (spec.border && edge) {
        px = Rgb{};
      } else {
        px = Rgb{dim(px.r), dim(px.g), dim(px.b)};
      }
    }
  }
  return out;
}

// Union of every patch selected over a run.
inline std::vector<std::size_t> selected_patches(const GenerationTrace& trace) {
  std::vector<std::size_t> all;
  for (const auto* sel : trace.of_type<SelectionTriggered>()) {
    all.insert(all.end(), sel->indices.begin(), sel->indices.end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

struct SelectionStats {
  std::size_t patch_count{0};
  std::size_t insertions{0};
  std::vector<std::vector<std::size_t>> selections;
  std::map<std::size_t, std::size_t> histogram;  // patch -> times selected; absent means zero
  std::optional<double> mean_score;
  std::optional<double> max_score;
};

inline SelectionStats selection_stats(const GenerationTrace& trace, const PatchGrid& grid) {
  SelectionStats stats;
  stats.patch_count = grid.patch_count();
  double sum = 0.0;
  std::size_t scored = 0;
  for (const auto* sel : trace.of_type<SelectionTriggered>()) {
    ++stats.insertions;
    stats.selections.push_back(sel->indices);
    for (std::size_t i : sel->indices) {
      ++stats.histogram[i];
    }
    for (double s : sel->scores) {
      sum += s;
      ++scored;
      stats.max_score = std::max(stats.max_score.value_or(s), s);
    }
  }
  if (scored > 0) {
    stats.mean_score = sum / static_cast<double>(scored);
  }
  return stats;
}

inline nlohmann::ordered_json to_json(const SelectionStats& stats) {
  nlohmann::ordered_json histogram = nlohmann::ordered_json::object();
  for (const auto& [patch, count] : stats.histogram) {
    histogram[std::to_string(patch)] = count;
  }
  nlohmann::ordered_json j = {{"patch_count", stats.patch_count},
                              {"insertions", stats.insertions},
                              {"selections", stats.selections},
                              {"histogram", histogram}};
  j["mean_score"] = stats.mean_score ? nlohmann::ordered_json(*stats.mean_score) : nullptr;
  j["max_score"] = stats.max_score ? nlohmann::ordered_json(*stats.max_score) : nullptr;
  return j;
}

}  // namespace icot::overlay
