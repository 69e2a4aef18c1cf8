#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "icot/icot.hpp"
#include "json.hpp"

namespace icot::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kInputFormatError = 3, kNumericError = 4 };

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::string image;
  std::optional<std::string> demo;
  std::string prompt{"What is in the red square? "};
  Mode mode{Mode::icot_insert};
  std::size_t n{64};
  TokenId signal{kLineBreak};
  std::size_t max_new_tokens{64};
  std::size_t max_insertions{8};
  std::size_t cooldown{4};
  std::uint64_t seed{kDefaultSeed};
  bool no_pos_enc{false};
  std::size_t patch_px{8};
  std::string trace_out{"trace.jsonl"};
  std::string overlay_out{"overlay.ppm"};
  std::string stats_out{"stats.json"};
  std::vector<std::size_t> sweep{32, 64, 128, 256};
};

// Command-line values; anything set here wins over the config file.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> image;
  std::optional<std::string> demo;
  std::optional<std::string> prompt;
  std::optional<std::string> mode;
  std::optional<std::size_t> n;
  std::optional<unsigned> signal;
  std::optional<std::size_t> max_new_tokens;
  std::optional<std::size_t> max_insertions;
  std::optional<std::size_t> cooldown;
  std::optional<std::uint64_t> seed;
  bool no_pos_enc{false};
  std::optional<std::size_t> patch_px;
  std::optional<std::string> trace_out;
  std::optional<std::string> overlay_out;
  std::optional<std::string> stats_out;
  std::optional<std::string> sweep;
};

inline std::vector<std::size_t> parse_sweep(const std::string& text) {
  std::vector<std::size_t> values;
  std::stringstream ss{text};
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) {
        throw ConfigError("");
      }
      values.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("sweep values must be positive integers, got '" + item + "'");
    }
  }
  if (values.empty()) {
    throw ConfigError("sweep list is empty");
  }
  return values;
}

inline TokenId checked_signal(long long v) {
  if (v < 0 || v > 255) {
    throw ConfigError("signal must be a byte value 0..255, got " + std::to_string(v));
  }
  return static_cast<TokenId>(v);
}

// Flat JSON config; keys are the long flag names without dashes.
inline void apply_json(RunConfig& cfg, const nlohmann::json& doc) {
  if (!doc.is_object()) {
    throw ConfigError("config file must hold a JSON object");
  }
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "image") {
        cfg.image = value.get<std::string>();
      } else if (key == "demo") {
        cfg.demo = value.get<std::string>();
      } else if (key == "prompt") {
        cfg.prompt = value.get<std::string>();
      } else if (key == "mode") {
        cfg.mode = parse_mode(value.get<std::string>());
      } else if (key == "n") {
        cfg.n = value.get<std::size_t>();
      } else if (key == "signal") {
        cfg.signal = checked_signal(value.get<long long>());
      } else if (key == "max-new-tokens") {
        cfg.max_new_tokens = value.get<std::size_t>();
      } else if (key == "max-insertions") {
        cfg.max_insertions = value.get<std::size_t>();
      } else if (key == "cooldown") {
        cfg.cooldown = value.get<std::size_t>();
      } else if (key == "seed") {
        cfg.seed = value.get<std::uint64_t>();
      } else if (key == "no-pos-enc") {
        cfg.no_pos_enc = value.get<bool>();
      } else if (key == "patch-px") {
        cfg.patch_px = value.get<std::size_t>();
      } else if (key == "trace-out") {
        cfg.trace_out = value.get<std::string>();
      } else if (key == "overlay-out") {
        cfg.overlay_out = value.get<std::string>();
      } else if (key == "stats-out") {
        cfg.stats_out = value.get<std::string>();
      } else if (key == "sweep") {
        cfg.sweep = value.is_string() ? parse_sweep(value.get<std::string>())
                                      : value.get<std::vector<std::size_t>>();
      } else {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string{"config file: "} + e.what());
  } catch (const UsageError& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig resolve_config(const Overrides& o) {
  RunConfig cfg;
  if (o.config) {
    std::ifstream in{*o.config};
    if (!in) {
      throw ConfigError("cannot open config file '" + *o.config + "'");
    }
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string{"config file: "} + e.what());
    }
    apply_json(cfg, doc);
  }
  if (o.image) cfg.image = *o.image;
  if (o.demo) cfg.demo = *o.demo;
  if (o.prompt) cfg.prompt = *o.prompt;
  if (o.mode) {
    try {
      cfg.mode = parse_mode(*o.mode);
    } catch (const UsageError& e) {
      throw ConfigError(e.what());
    }
  }
  if (o.n) cfg.n = *o.n;
  if (o.signal) cfg.signal = checked_signal(*o.signal);
  if (o.max_new_tokens) cfg.max_new_tokens = *o.max_new_tokens;
  if (o.max_insertions) cfg.max_insertions = *o.max_insertions;
  if (o.cooldown) cfg.cooldown = *o.cooldown;
  if (o.seed) cfg.seed = *o.seed;
  if (o.no_pos_enc) cfg.no_pos_enc = true;
  if (o.patch_px) cfg.patch_px = *o.patch_px;
  if (o.trace_out) cfg.trace_out = *o.trace_out;
  if (o.overlay_out) cfg.overlay_out = *o.overlay_out;
  if (o.stats_out) cfg.stats_out = *o.stats_out;
  if (o.sweep) cfg.sweep = parse_sweep(*o.sweep);

  if (cfg.image.empty()) {
    throw ConfigError("no image given (--image)");
  }
  if (!std::filesystem::is_regular_file(cfg.image)) {
    throw ConfigError("image '" + cfg.image + "' does not exist");
  }
  if (cfg.demo && !std::filesystem::is_regular_file(*cfg.demo)) {
    throw ConfigError("demonstration '" + *cfg.demo + "' does not exist");
  }
  if (cfg.n == 0) {
    throw ConfigError("--n must be at least 1");
  }
  if (cfg.max_new_tokens == 0) {
    throw ConfigError("--max-new-tokens must be at least 1");
  }
  if (cfg.patch_px == 0) {
    throw ConfigError("--patch-px must be at least 1");
  }
  for (std::size_t v : cfg.sweep) {
    if (v == 0) {
      throw ConfigError("sweep values must be at least 1");
    }
  }
  return cfg;
}

// Everything a run needs, loaded and validated before any output is written.
struct Session {
  RunConfig config;
  Image image;
  PatchGrid grid;
  Model model;
  ElementSequence prompt;
};

inline Session open_session(const RunConfig& cfg) {
  ModelConfig mc;
  mc.seed = cfg.seed;
  mc.use_positional_encoding = !cfg.no_pos_enc;
  Session s{cfg, read_ppm(cfg.image), {}, Model{mc}, {}};
  s.grid = PatchGrid::for_image(s.image, cfg.patch_px);

  prompting::PromptTemplate tmpl;
  if (cfg.mode == Mode::no_cot) {
    tmpl.zero_shot_suffix.clear();
  }
  if (cfg.demo) {
    const prompting::Demonstration demo = prompting::load_demonstration(*cfg.demo);
    s.prompt = prompting::assemble_one_shot(s.model, tmpl, demo, cfg.prompt, cfg.patch_px);
  } else {
    s.prompt = prompting::assemble_zero_shot(tmpl, cfg.prompt);
  }
  return s;
}

inline GenerationConfig generation_config(const RunConfig& cfg, std::size_t n) {
  GenerationConfig gc;
  gc.mode = cfg.mode;
  gc.n = n;
  gc.signal_set = {cfg.signal};
  gc.max_new_tokens = cfg.max_new_tokens;
  gc.max_insertions = cfg.max_insertions;
  gc.min_tokens_between_insertions = cfg.cooldown;
  gc.patch_px = cfg.patch_px;
  return gc;
}

inline std::size_t clip_n(std::size_t n, const PatchGrid& grid, std::ostream& err) {
  if (n > grid.patch_count()) {
    err << "note: n=" << n << " clipped to patch count " << grid.patch_count() << '\n';
    return grid.patch_count();
  }
  return n;
}

// Writes through a temporary sibling so readers never see partial files.
inline void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out{tmp, std::ios::binary | std::ios::trunc};
    if (!out) {
      throw ConfigError("cannot write '" + path.string() + "'");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw ConfigError("failed writing '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

inline std::string dump_json(const nlohmann::ordered_json& j, int indent = -1) {
  return j.dump(indent, ' ', false, nlohmann::json::error_handler_t::replace);
}

// Substring after the last "Answer:" marker, if any.
inline std::optional<std::string> extract_marked_answer(const std::string& text) {
  const auto at = text.rfind("Answer:");
  if (at == std::string::npos) {
    return std::nullopt;
  }
  std::string rest = text.substr(at + 7);
  const auto first = rest.find_first_not_of(' ');
  return first == std::string::npos ? std::string{} : rest.substr(first);
}

inline int cmd_run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Session s = open_session(cfg);
  const std::size_t n = clip_n(cfg.n, s.grid, err);
  const GenerationResult result = generate(s.model, s.image, s.prompt, generation_config(cfg, n));

  std::string overlay_bytes;
  std::string stats_bytes;
  if (is_icot(cfg.mode)) {
    const auto selected = overlay::selected_patches(result.trace);
    overlay_bytes = encode_ppm(overlay::render_overlay(s.image, s.grid, selected));
    stats_bytes = dump_json(overlay::to_json(overlay::selection_stats(result.trace, s.grid)), 2) + "\n";
  }
  write_atomic(cfg.trace_out, trace_to_jsonl(result.trace));
  if (is_icot(cfg.mode)) {
    write_atomic(cfg.overlay_out, overlay_bytes);
    write_atomic(cfg.stats_out, stats_bytes);
  }

  const std::string answer = result.sequence.answer_text();
  out << answer << '\n';
  if (auto marked = extract_marked_answer(answer)) {
    out << "extracted answer: " << *marked << '\n';
  }
  return kOk;
}

inline int cmd_sweep(RunConfig cfg, std::ostream& out, std::ostream& err) {
  if (!is_icot(cfg.mode)) {
    throw ConfigError("sweep needs an icot mode (icot_insert or icot_kv_copy)");
  }
  const Session s = open_session(cfg);
  struct Item {
    std::size_t requested;
    std::size_t effective;
    std::future<GenerationResult> run;
  };
  std::vector<Item> items;
  for (std::size_t requested : cfg.sweep) {
    const std::size_t effective = clip_n(requested, s.grid, err);
    const GenerationConfig gc = generation_config(cfg, effective);
    items.push_back({requested, effective, std::async(std::launch::async, [&s, gc] {
                       return generate(s.model, s.image, s.prompt, gc);
                     })});
  }
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (Item& item : items) {
    const GenerationResult r = item.run.get();
    summary.push_back({{"n", item.effective},
                       {"requested_n", item.requested},
                       {"clipped", item.effective != item.requested},
                       {"insertions", r.sequence.span_count()},
                       {"forwarded_positions", r.trace.forwarded_positions},
                       {"answer", r.sequence.answer_text()}});
  }
  out << dump_json(summary, 2) << '\n';
  return kOk;
}

inline nlohmann::ordered_json to_json(const ArmCost& c) {
  return {{"emitted", c.emitted},
          {"insertions", c.insertions},
          {"forwarded_positions", c.forwarded_positions},
          {"kv_copied_entries", c.kv_copied_entries}};
}

inline int cmd_compare(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Session s = open_session(cfg);
  const std::size_t n = clip_n(cfg.n, s.grid, err);
  const DivergenceReport report = compare_modes(s.model, s.image, s.prompt, generation_config(cfg, n));
  nlohmann::ordered_json j = {{"n", n}, {"layers", s.model.config().n_layers}};
  j["first_divergence"] =
      report.first_divergence ? nlohmann::ordered_json(*report.first_divergence) : nullptr;
  j["insert"] = to_json(report.insert);
  j["kvcopy"] = to_json(report.kv_copy);
  j["layer1_delta"] = report.layer1_delta ? nlohmann::ordered_json(*report.layer1_delta) : nullptr;
  j["compared_spans"] = report.compared_spans;
  out << dump_json(j, 2) << '\n';
  return kOk;
}

inline void add_common_options(CLI::App& cmd, Overrides& o) {
  cmd.add_option("--config", o.config, "Flat JSON config; flags override its fields");
  cmd.add_option("--image", o.image, "Input image (binary PPM, P6)");
  cmd.add_option("--demo", o.demo, "One-shot demonstration JSON");
  cmd.add_option("--prompt", o.prompt, "Question text");
  cmd.add_option("--mode", o.mode, "no_cot | text_cot | icot_insert | icot_kv_copy");
  cmd.add_option("--n", o.n, "Patches selected per insertion (clipped to the patch count)");
  cmd.add_option("--signal", o.signal, "Signal token byte value (default 10, line break)");
  cmd.add_option("--max-new-tokens", o.max_new_tokens, "Generation length limit");
  cmd.add_option("--max-insertions", o.max_insertions, "Insertion budget per run");
  cmd.add_option("--cooldown", o.cooldown, "Minimum text tokens between insertions");
  cmd.add_option("--seed", o.seed, "Model weight seed");
  cmd.add_flag("--no-pos-enc", o.no_pos_enc, "Disable positional embeddings");
  cmd.add_option("--patch-px", o.patch_px, "Patch side length in pixels (default 8)");
  cmd.add_option("--trace-out", o.trace_out, "Trace output (JSON lines)");
  cmd.add_option("--overlay-out", o.overlay_out, "Selection overlay output (PPM)");
  cmd.add_option("--stats-out", o.stats_out, "Selection statistics output (JSON)");
  cmd.add_option("--sweep", o.sweep, "Comma-separated n values for the sweep command");
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Greedy decoding that splices attended image patches back into the context"};
  app.require_subcommand(1);
  Overrides o;
  CLI::App* run = app.add_subcommand("run", "Generate once and write trace, overlay and stats");
  CLI::App* sweep = app.add_subcommand("sweep", "Generate once per selection count");
  CLI::App* compare = app.add_subcommand("compare", "Compare input insertion against KV copying");
  for (CLI::App* cmd : {run, sweep, compare}) {
    add_common_options(*cmd, o);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfigError;
  }

  try {
    const RunConfig cfg = resolve_config(o);
    if (run->parsed()) {
      return cmd_run(cfg, out, err);
    }
    if (sweep->parsed()) {
      return cmd_sweep(cfg, out, err);
    }
    return cmd_compare(cfg, out, err);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const FormatError& e) {
    err << "input format error: " << e.what() << '\n';
    return kInputFormatError;
  } catch (const ValidationError& e) {
    err << "input format error: " << e.what() << '\n';
    return kInputFormatError;
  } catch (const GeometryError& e) {
    err << "input format error: " << e.what() << '\n';
    return kInputFormatError;
  } catch (const Error& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace icot::cli
