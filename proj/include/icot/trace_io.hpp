#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>

#include "icot/decoder.hpp"
#include "icot/error.hpp"
#include "json.hpp"

namespace icot {

using ordered_json = nlohmann::ordered_json;

inline std::string_view span_mode_name(Mode m) { return m == Mode::icot_kv_copy ? "kvcopy" : "insert"; }

inline ordered_json to_json(const TraceEvent& event) {
  return std::visit(
      [](const auto& e) -> ordered_json {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, TokenEmitted>) {
          return {{"ev", "token"}, {"step", e.step}, {"id", e.id}};
        } else if constexpr (std::is_same_v<T, SelectionTriggered>) {
          return {{"ev", "select"}, {"step", e.step}, {"signal", e.signal}, {"indices", e.indices},
                  {"scores", e.scores}};
        } else if constexpr (std::is_same_v<T, SpanInserted>) {
          return {{"ev", "span"}, {"step", e.step}, {"mode", span_mode_name(e.mode)}, {"rows", e.rows}};
        } else {
          return {{"ev", "stop"}, {"reason", e.reason == StopReason::eos ? "eos" : "max_tokens"}};
        }
      },
      event);
}

// Newline-delimited JSON: one object per event, then a counters line.
inline void write_trace(std::ostream& out, const GenerationTrace& trace) {
  for (const TraceEvent& e : trace.events) {
    out << to_json(e).dump() << '\n';
  }
  const ordered_json counters = {
      {"ev", "counters"}, {"forwarded", trace.forwarded_positions}, {"kv_copied", trace.kv_copied_entries}};
  out << counters.dump() << '\n';
}

inline std::string trace_to_jsonl(const GenerationTrace& trace) {
  std::ostringstream out;
  write_trace(out, trace);
  return out.str();
}

inline GenerationTrace read_trace(std::istream& in) {
  GenerationTrace trace;
  std::string line;
  std::size_t line_no = 0;
  bool saw_counters = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(line);
      const std::string ev = j.at("ev").get<std::string>();
      if (ev == "token") {
        trace.events.emplace_back(TokenEmitted{j.at("step").get<std::size_t>(), j.at("id").get<TokenId>()});
      } else if (ev == "select") {
        trace.events.emplace_back(SelectionTriggered{j.at("step").get<std::size_t>(),
                                                     j.at("signal").get<TokenId>(),
                                                     j.at("indices").get<std::vector<std::size_t>>(),
                                                     j.at("scores").get<std::vector<double>>()});
      } else if (ev == "span") {
        const std::string mode = j.at("mode").get<std::string>();
        if (mode != "insert" && mode != "kvcopy") {
          throw FormatError("unknown span mode '" + mode + "'");
        }
        trace.events.emplace_back(SpanInserted{j.at("step").get<std::size_t>(),
                                               mode == "kvcopy" ? Mode::icot_kv_copy : Mode::icot_insert,
                                               j.at("rows").get<std::size_t>()});
      } else if (ev == "stop") {
        const std::string reason = j.at("reason").get<std::string>();
        if (reason != "eos" && reason != "max_tokens") {
          throw FormatError("unknown stop reason '" + reason + "'");
        }
        trace.events.emplace_back(Stopped{reason == "eos" ? StopReason::eos : StopReason::max_tokens});
      } else if (ev == "counters") {
        trace.forwarded_positions = j.at("forwarded").get<std::size_t>();
        trace.kv_copied_entries = j.at("kv_copied").get<std::size_t>();
        saw_counters = true;
      } else {
        throw FormatError("unknown event '" + ev + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("trace line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!saw_counters) {
    throw FormatError("trace has no counters line");
  }
  return trace;
}

}  // namespace icot
