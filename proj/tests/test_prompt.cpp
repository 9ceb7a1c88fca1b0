#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>

#include "mactk/errors.hpp"
#include "mactk/knowledge_base.hpp"
#include "mactk/prompt.hpp"

using namespace mactk;

namespace {

std::string data_path(const std::string& name) {
  return std::string(MACTK_DATA_DIR) + "/" + name;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct GoldenSetup {
  TemplateFile file;
  KnowledgeBase kb;
  std::string item = "Mascom announces new price increases in 2024";
  AspectBindings bindings;

  GoldenSetup()
      : file(load_template(data_path("template.json"))),
        kb(load_knowledge_base(data_path("kb.json"))) {
    bindings = extract_aspects(kb, item);
  }

  RenderedPrompt render(PromptMode mode) const {
    return render_prompt(file.tpl, file.demos_for(mode), item, bindings, mode);
  }
};

std::string section_text(const RenderedPrompt& prompt, SectionKind kind) {
  const Section* section = prompt.find(kind);
  REQUIRE(section != nullptr);
  return prompt.full_text.substr(section->span.begin, section->span.length());
}

}  // namespace

TEST_CASE("mac render matches the frozen golden byte for byte") {
  GoldenSetup s;
  CHECK(s.render(PromptMode::Mac).full_text == read_file(data_path("golden_mac.txt")));
}

TEST_CASE("vanilla render matches the frozen golden byte for byte") {
  GoldenSetup s;
  CHECK(s.render(PromptMode::Vanilla).full_text == read_file(data_path("golden_vanilla.txt")));
}

TEST_CASE("cot render matches the frozen golden byte for byte") {
  GoldenSetup s;
  CHECK(s.render(PromptMode::Cot).full_text == read_file(data_path("golden_cot.txt")));
}

TEST_CASE("rendering is byte-deterministic") {
  GoldenSetup s;
  for (PromptMode mode : {PromptMode::Vanilla, PromptMode::Cot, PromptMode::Mac})
    CHECK(s.render(mode).full_text == s.render(mode).full_text);
}

TEST_CASE("renders never end in a newline and blocks are blank-line separated") {
  GoldenSetup s;
  for (PromptMode mode : {PromptMode::Vanilla, PromptMode::Cot, PromptMode::Mac}) {
    const RenderedPrompt prompt = s.render(mode);
    REQUIRE_FALSE(prompt.full_text.empty());
    CHECK(prompt.full_text.back() != '\n');
    CHECK(prompt.full_text.find("\n\n\n") == std::string::npos);
  }
}

TEST_CASE("section spans carve the prompt into its parts") {
  GoldenSetup s;
  const RenderedPrompt prompt = s.render(PromptMode::Mac);

  CHECK(section_text(prompt, SectionKind::Instruction) == s.file.tpl.instruction);
  CHECK(section_text(prompt, SectionKind::Context) == s.file.tpl.context);

  const std::string demos = section_text(prompt, SectionKind::Demonstrations);
  CHECK(demos.substr(0, 9) == "ARTICLE: ");
  CHECK(demos.find(s.file.demos[0].text) != std::string::npos);
  CHECK(demos.find(s.file.demos[1].text) != std::string::npos);
  CHECK(demos.find(s.item) == std::string::npos);

  const std::string input = section_text(prompt, SectionKind::Input);
  CHECK(input == "ARTICLE: " + s.item);

  const std::string aspects = section_text(prompt, SectionKind::Aspects);
  CHECK(aspects == "ASPECTS: Competitor (), TSP (Mascom), Product ()");

  // The aspects line sits directly under the input line, and the prompt ends
  // with it.
  const Section* aspect_section = prompt.find(SectionKind::Aspects);
  CHECK(aspect_section->span.end == prompt.full_text.size());

  // Sections appear in order and inside the prompt.
  std::size_t cursor = 0;
  for (const Section& section : prompt.sections) {
    CHECK(section.span.begin >= cursor);
    CHECK(section.span.end <= prompt.full_text.size());
    if (section.kind != SectionKind::Aspects)  // aspects nests after input
      cursor = section.span.end;
  }
}

TEST_CASE("cot appends the trigger to the instruction section") {
  GoldenSetup s;
  const RenderedPrompt prompt = s.render(PromptMode::Cot);
  CHECK(section_text(prompt, SectionKind::Instruction) ==
        s.file.tpl.instruction + " " + std::string(kDefaultCotTrigger));
  CHECK(prompt.find(SectionKind::Aspects) == nullptr);
}

TEST_CASE("vanilla and cot renders carry no aspects marker") {
  GoldenSetup s;
  CHECK(s.render(PromptMode::Vanilla).full_text.find("ASPECTS") == std::string::npos);
  CHECK(s.render(PromptMode::Cot).full_text.find("ASPECTS") == std::string::npos);
}

TEST_CASE("empty context is skipped entirely") {
  GoldenSetup s;
  PromptTemplate tpl = s.file.tpl;
  tpl.context.clear();
  const RenderedPrompt prompt =
      render_prompt(tpl, {}, s.item, AspectBindings{}, PromptMode::Vanilla);
  CHECK(prompt.find(SectionKind::Context) == nullptr);
  CHECK(prompt.full_text == tpl.instruction + "\n\nARTICLE: " + s.item);
}

TEST_CASE("zero-shot renders have no demonstrations section") {
  GoldenSetup s;
  const RenderedPrompt prompt =
      render_prompt(s.file.tpl, {}, s.item, s.bindings, PromptMode::Mac);
  CHECK(prompt.find(SectionKind::Demonstrations) == nullptr);
  CHECK(prompt.full_text.find("ASPECTS: Competitor (), TSP (Mascom), Product ()") !=
        std::string::npos);
}

TEST_CASE("every schema slot appears exactly once in the aspects line") {
  GoldenSetup s;
  AspectBindings bindings;
  bindings.ensure_slot("Competitor");
  bindings.add("Product", {"5G", {0, 2}});
  bindings.add("Product", {"fiber", {10, 15}});
  CHECK(aspect_line(s.file.tpl.schema, bindings) ==
        "Competitor (), TSP (), Product (5G, fiber)");
  CHECK(aspect_line(s.file.tpl.schema, AspectBindings{}) ==
        "Competitor (), TSP (), Product ()");
}

TEST_CASE("render rejects inputs that cannot form a valid prompt") {
  GoldenSetup s;
  try {
    render_prompt(s.file.tpl, {}, "", AspectBindings{}, PromptMode::Vanilla);
    FAIL("expected an invalid-input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }

  AspectBindings stray;
  stray.add("Ticker", {"MSCM", {0, 4}});
  try {
    render_prompt(s.file.tpl, {}, s.item, stray, PromptMode::Mac);
    FAIL("expected a schema mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SchemaMismatch);
  }

  Demonstration hollow;
  hollow.item_text = "text";
  try {
    render_prompt(s.file.tpl, {hollow}, s.item, AspectBindings{}, PromptMode::Vanilla);
    FAIL("expected an invalid-input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("demos_for honours mode and k") {
  GoldenSetup s;
  CHECK(s.file.demos_for(PromptMode::Vanilla).size() == 2);
  CHECK(s.file.demos_for(PromptMode::Mac, 1).size() == 1);
  CHECK(s.file.demos_for(PromptMode::Vanilla, 0).empty());
  try {
    s.file.demos_for(PromptMode::Vanilla, 3);
    FAIL("expected a capacity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capacity);
  }

  TemplateFile stripped = s.file;
  stripped.demos[0].cot_output.reset();
  try {
    stripped.demos_for(PromptMode::Cot);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("parse_output returns the last in-scale fragment") {
  OutputContract contract;  // {"score": ...} on 1..4
  CHECK(std::get<int>(parse_output("{\"score\": 1} then {\"score\": 3}", contract)) == 3);
  CHECK(std::get<int>(parse_output("Verdict: {\"score\": 2}.", contract)) == 2);
  CHECK(std::get<int>(parse_output("{ \"score\" :  4 }", contract)) == 4);
  CHECK(std::get<int>(parse_output("{\"score\": \"2\"}", contract)) == 2);
  CHECK(std::get<int>(parse_output("{\"score\": '3'}", contract)) == 3);
  // A trailing out-of-scale fragment falls back to the last valid one.
  CHECK(std::get<int>(parse_output("{\"score\": 2} and {\"score\": 9}", contract)) == 2);
}

TEST_CASE("parse_output distinguishes missing fragments from off-scale values") {
  OutputContract contract;
  try {
    parse_output("The relevance is about a 2 I think.", contract);
    FAIL("expected a parse failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseFailure);
  }
  try {
    parse_output("{\"rating\": 2}", contract);  // wrong key
    FAIL("expected a parse failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseFailure);
  }
  try {
    parse_output("{\"score\": 9}", contract);
    FAIL("expected an out-of-range error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfRange);
  }
  try {
    parse_output("{\"score\": \"high\"}", contract);
    FAIL("expected an out-of-range error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfRange);
  }
}

TEST_CASE("parse_output handles negative ranges and categorical labels") {
  OutputContract signed_contract;
  signed_contract.scale = IntRange{-2, 2};
  CHECK(std::get<int>(parse_output("{\"score\": -1}", signed_contract)) == -1);

  OutputContract sentiment;
  sentiment.output_key = "sentiment";
  sentiment.scale = std::vector<std::string>{"negative", "neutral", "positive"};
  CHECK(std::get<std::string>(parse_output("{\"sentiment\": \"POSITIVE\"}", sentiment)) ==
        "positive");
  CHECK(std::get<std::string>(parse_output("{\"sentiment\": neutral}", sentiment)) ==
        "neutral");
  CHECK(std::get<std::string>(parse_output("{\"sentiment\": 'Negative'}", sentiment)) ==
        "negative");
}

TEST_CASE("format_label writes the canonical fragment and round-trips") {
  OutputContract contract;
  CHECK(format_label(contract, ParsedLabel{2}) == "{\"score\": 2}");
  CHECK(std::get<int>(parse_output(format_label(contract, ParsedLabel{4}), contract)) == 4);

  OutputContract sentiment;
  sentiment.output_key = "sentiment";
  sentiment.scale = std::vector<std::string>{"negative", "neutral", "positive"};
  CHECK(format_label(sentiment, ParsedLabel{std::string("Positive")}) ==
        "{\"sentiment\": \"positive\"}");

  try {
    format_label(contract, ParsedLabel{9});
    FAIL("expected an out-of-range error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OutOfRange);
  }
  try {
    format_label(contract, ParsedLabel{std::string("two")});
    FAIL("expected an invalid-input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("ablate_bindings keeps only the requested slots, all slots stay present") {
  AspectBindings bindings;
  bindings.add("Competitor", {"Vodacom", {0, 7}});
  bindings.add("TSP", {"Mascom", {10, 16}});
  bindings.add("Product", {"5G", {20, 22}});

  const AspectBindings none = ablate_bindings(bindings, {});
  CHECK(none.slot_count() == 3);
  CHECK(none.filled_count() == 0);

  const AspectBindings only_tsp = ablate_bindings(bindings, {1});
  CHECK(only_tsp.filled_indices() == std::vector<std::size_t>{1});
  REQUIRE(only_tsp.find("TSP") != nullptr);
  CHECK(only_tsp.find("TSP")->front().value == "Mascom");
  CHECK(only_tsp.find("Competitor")->empty());

  const AspectBindings all = ablate_bindings(bindings, {0, 1, 2});
  CHECK(all == bindings);

  try {
    ablate_bindings(bindings, {7});
    FAIL("expected an invalid-subset error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidSubset);
  }
}

TEST_CASE("template loading validates the format tag and required fields") {
  GoldenSetup s;
  CHECK(s.file.tpl.contract.output_key == "score");
  CHECK(s.file.tpl.contract.range() == IntRange{1, 4});
  CHECK(s.file.tpl.schema.slots ==
        std::vector<std::string>{"Competitor", "TSP", "Product"});
  REQUIRE(s.file.demos.size() == 2);
  CHECK(s.file.demos[1].bindings.find("Product")->front().value == "smartphone");

  try {
    load_template(data_path("kb.json"));  // wrong format tag
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Load);
  }
}

TEST_CASE("prompt modes parse and print symmetrically") {
  for (const char* name : {"vanilla", "cot", "mac"})
    CHECK(std::string(to_string(parse_mode(name))) == name);
  try {
    parse_mode("freeform");
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}
