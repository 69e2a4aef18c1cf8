#include <gtest/gtest.h>

#include <sstream>

#include "golden_scenario.hpp"
#include "icot/trace_io.hpp"

using namespace icot;

TEST(TraceJson, ExactFieldLayout) {
  GenerationTrace trace;
  trace.events = {TokenEmitted{0, 72}, SelectionTriggered{1, 10, {2, 5}, {0.25, 0.5}},
                  SpanInserted{1, Mode::icot_kv_copy, 2}, Stopped{StopReason::eos}};
  trace.forwarded_positions = 40;
  trace.kv_copied_entries = 4;
  EXPECT_EQ(trace_to_jsonl(trace),
            "{\"ev\":\"token\",\"step\":0,\"id\":72}\n"
            "{\"ev\":\"select\",\"step\":1,\"signal\":10,\"indices\":[2,5],\"scores\":[0.25,0.5]}\n"
            "{\"ev\":\"span\",\"step\":1,\"mode\":\"kvcopy\",\"rows\":2}\n"
            "{\"ev\":\"stop\",\"reason\":\"eos\"}\n"
            "{\"ev\":\"counters\",\"forwarded\":40,\"kv_copied\":4}\n");
}

TEST(TraceJson, GeneratedTraceReadsBackIdentically) {
  const Model model;
  GenerationConfig gc;
  gc.n = 3;
  const auto r = generate(model, fixtures::golden_image(), fixtures::golden_prompt(), gc);
  const std::string text = trace_to_jsonl(r.trace);
  std::istringstream in{text};
  const GenerationTrace back = read_trace(in);
  EXPECT_EQ(trace_to_jsonl(back), text);
  EXPECT_EQ(back.forwarded_positions, r.trace.forwarded_positions);
}

TEST(TraceJson, ReaderRejectsMalformedInput) {
  std::istringstream missing_counters{"{\"ev\":\"token\",\"step\":0,\"id\":1}\n"};
  EXPECT_THROW(read_trace(missing_counters), FormatError);
  std::istringstream bad_event{"{\"ev\":\"teleport\"}\n"};
  EXPECT_THROW(read_trace(bad_event), FormatError);
  std::istringstream not_json{"{token\n"};
  EXPECT_THROW(read_trace(not_json), FormatError);
}
