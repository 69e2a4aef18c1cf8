// Regenerates the frozen golden files under tests/data. Run once after any
// change to the model's numerics and commit the output:
//   ./build/tests/make_golden tests/data
#include <filesystem>
#include <fstream>
#include <iostream>

#include "golden_scenario.hpp"

using namespace icot;
using namespace icot::fixtures;

namespace {

void write_ids(const std::filesystem::path& path, const std::string& header, const std::vector<TokenId>& ids) {
  std::ofstream out{path};
  out << "# " << header << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i] << ((i + 1) % 16 == 0 || i + 1 == ids.size() ? '\n' : ' ');
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : data_dir();
  std::filesystem::create_directories(dir);
  const Model model{};

  {
    std::ofstream out{dir / "golden.ppm", std::ios::binary};
    write_ppm(out, golden_image());
  }

  const ElementSequence bos{TextToken{kBos}};
  PrefillResult pre = model.prefill(bos);
  std::vector<TokenId> ids;
  StepOutput step = std::move(pre.output);
  for (int i = 0; i < 8; ++i) {
    ids.push_back(step.next_token());
    step = model.decode_step(pre.cache, ids.back());
  }
  write_ids(dir / "golden_bos_greedy8.txt", "prefill([BOS]) then 8 greedy steps, default model", ids);

  write_ids(dir / "golden_scenario_greedy64.txt",
            "golden image + zero-shot prompt, 64 greedy steps, default model",
            reference_greedy(model, golden_image(), golden_prompt(), 64, false));

  // What `icot run --mode no_cot` prints: the prompt without the step-by-step suffix.
  prompting::PromptTemplate direct;
  direct.zero_shot_suffix.clear();
  const auto direct_ids =
      reference_greedy(model, golden_image(), prompting::assemble_zero_shot(direct, kGoldenQuestion), 64, true);
  std::vector<TokenId> text;
  for (TokenId t : direct_ids) {
    if (t != kEos) {
      text.push_back(t);
    }
  }
  std::ofstream{dir / "golden_cli_no_cot_answer.bin", std::ios::binary} << detokenize(text);
  // One-shot demonstration fixture: green field with a yellow block in patch 5.
  Image demo_image{32, 32, Rgb{30, 140, 60}};
  for (std::size_t y = 8; y < 16; ++y) {
    for (std::size_t x = 8; x < 16; ++x) {
      demo_image.at(x, y) = Rgb{240, 220, 40};
    }
  }
  std::ofstream{dir / "demo.ppm", std::ios::binary} << encode_ppm(demo_image);
  const prompting::Demonstration demo{
      demo_image,
      {prompting::TextSegment{"The yellow block sits near the top left.\n"}, prompting::ManualSpan{{5}},
       prompting::TextSegment{"Its neighbours are green.\n"}, prompting::ManualSpan{{4, 6, 9}}},
      "Answer: yellow"};
  std::ofstream{dir / "demo.json"} << prompting::demonstration_to_json(demo, "demo.ppm").dump(2) << '\n';
  std::cout << "wrote golden files to " << dir << '\n';
  return 0;
}
