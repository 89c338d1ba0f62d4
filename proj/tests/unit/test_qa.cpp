#include <map>
#include <set>

#include "doctest.h"

#include "citypipe/qa.hpp"
#include "citypipe/util.hpp"
#include "support/fixture.hpp"

using citypipe::Dimension;
using citypipe::DatasetMode;
using citypipe::InstructionRecord;
using citypipe::PromptPerspective;
using citypipe::Role;

namespace {

std::string golden(const std::string& name) {
  return citypipe::read_file(testsupport::test_dir() / "golden" / name);
}

citypipe::SegmentTuple fixture_tuple() {
  citypipe::SegmentTuple tuple;
  tuple.scenario_id = "s";
  tuple.view_id = "v";
  tuple.phase_index = 0;
  tuple.perspective = citypipe::Perspective::vehicle;
  citypipe::FrameRef frame;
  frame.index = 0;
  frame.image = "f.png";
  tuple.frames.push_back(frame);
  tuple.pedestrian_caption =
      "The pedestrian is a man in his 30s wearing a black jacket. "
      "He is on the right side of the vehicle. "
      "He walks slowly across the crossing. "
      "The weather is rainy and the road surface is wet.";
  tuple.vehicle_caption =
      "The vehicle is positioned behind the pedestrian. "
      "It is moving forward slowly. "
      "The road is wet under rainy weather.";
  return tuple;
}

}  // namespace

TEST_CASE("long prompts byte-match the transcribed goldens") {
  CHECK(citypipe::build_long_prompt(Role::pedestrian, PromptPerspective::overhead) ==
        golden("prompt_pedestrian_overhead.txt"));
  CHECK(citypipe::build_long_prompt(Role::vehicle, PromptPerspective::overhead) ==
        golden("prompt_vehicle_overhead.txt"));
  CHECK(citypipe::build_long_prompt(Role::pedestrian, PromptPerspective::ego) ==
        golden("prompt_pedestrian_ego.txt"));
  CHECK(citypipe::build_long_prompt(Role::vehicle, PromptPerspective::ego) ==
        golden("prompt_vehicle_ego.txt"));
}

TEST_CASE("long prompt anchors from the template text") {
  const std::string ped = citypipe::build_long_prompt(Role::pedestrian, PromptPerspective::overhead);
  CHECK(ped.rfind("This picture shows the relationship between the pedestrian in the green box "
                  "and the vehicle in the blue box.",
                  0) == 0);
  const std::string veh = citypipe::build_long_prompt(Role::vehicle, PromptPerspective::overhead);
  CHECK(veh.find("the vehicle in the blue box or the vehicle closest to the pedestrian") !=
        std::string::npos);
  const std::string ego = citypipe::build_long_prompt(Role::vehicle, PromptPerspective::ego);
  CHECK(ego.find("the vehicle in the blue box") == std::string::npos);
  CHECK(ego.find("ego-vehicle") != std::string::npos);
}

TEST_CASE("sentence splitting handles terminal punctuation and blanks") {
  const auto sentences = citypipe::split_sentences("One here. Two there!  Three now? Four");
  REQUIRE(sentences.size() == 4);
  CHECK(sentences[0] == "One here.");
  CHECK(sentences[1] == "Two there!");
  CHECK(sentences[2] == "Three now?");
  CHECK(sentences[3] == "Four");

  CHECK(citypipe::split_sentences("").empty());
  CHECK(citypipe::split_sentences("   ").empty());
  // an empty-after-trim fragment between terminals is dropped
  CHECK(citypipe::split_sentences("End. . ").size() == 2);
  CHECK(citypipe::split_sentences("No decimal split, 3.5 meters away.").size() == 1);
}

TEST_CASE("rule classifier matches the documented examples") {
  CHECK(citypipe::RuleClassifier::classify_sentence(
            "The pedestrian is in his 30s, wearing a black jacket.") == Dimension::attributes);
  CHECK(citypipe::RuleClassifier::classify_sentence("It was raining and the road was wet.") ==
        Dimension::environment);
}

TEST_CASE("rule classifier reproduces the 20-sentence hand-labelled fixture exactly") {
  const nlohmann::json fixture = nlohmann::json::parse(
      citypipe::read_file(testsupport::test_dir() / "fixtures" / "dimension_labels.json"));
  REQUIRE(fixture.size() == 20);
  std::size_t agreed = 0;
  for (const auto& row : fixture) {
    const Dimension got =
        citypipe::RuleClassifier::classify_sentence(row.at("sentence").get<std::string>());
    if (std::string(citypipe::to_string(got)) == row.at("label").get<std::string>()) {
      ++agreed;
    } else {
      MESSAGE("disagreement on: " << row.at("sentence").get<std::string>());
    }
  }
  CHECK(agreed == fixture.size());
}

TEST_CASE("split_description is total and preserves the sentence multiset") {
  const std::string desc =
      "The pedestrian is a man in his 30s wearing a black jacket. "
      "He is on the right side of the vehicle. "
      "He walks slowly across the crossing. "
      "The weather is rainy and the road surface is wet.";
  const auto labeled = citypipe::split_description(desc);
  const auto sentences = citypipe::split_sentences(desc);
  REQUIRE(labeled.size() == sentences.size());
  std::multiset<std::string> from_split;
  for (const auto& ls : labeled) {
    from_split.insert(ls.sentence);
  }
  CHECK(from_split == std::multiset<std::string>(sentences.begin(), sentences.end()));
}

TEST_CASE("build_short_qa groups sentences by dimension in source order") {
  const auto tuple = fixture_tuple();
  const auto pairs = citypipe::build_short_qa(tuple.pedestrian_caption, Role::pedestrian);
  REQUIRE(pairs.size() == 4);  // one sentence per dimension
  CHECK(pairs[0].dimension == Dimension::attributes);
  CHECK(pairs[1].dimension == Dimension::location);
  CHECK(pairs[2].dimension == Dimension::motion_state);
  CHECK(pairs[3].dimension == Dimension::environment);
  CHECK(pairs[0].question == citypipe::short_question(Role::pedestrian, Dimension::attributes));

  // entirely environmental description -> one pair
  const auto env_only =
      citypipe::build_short_qa("It was raining. The road was wet.", Role::pedestrian);
  REQUIRE(env_only.size() == 1);
  CHECK(env_only[0].dimension == Dimension::environment);
  CHECK(env_only[0].answer == "It was raining. The road was wet.");

  // two attribute sentences keep their source order in the answer
  const auto ordered = citypipe::build_short_qa(
      "The man wears a black jacket. The woman wears a red coat.", Role::pedestrian);
  REQUIRE(ordered.size() == 1);
  CHECK(ordered[0].answer ==
        "The man wears a black jacket. The woman wears a red coat.");
}

TEST_CASE("remote classifier parses replies and falls back on failure") {
  const std::vector<std::string> sentences = {
      "The weather is rainy and the road surface is wet.",  // env by rules
      "He walks slowly.",                                    // motion by rules
  };

  // remote relabels sentence 1 as location (b); sentence 2 line is junk
  citypipe::RemoteClassifier remote([](const std::string& prompt) {
    CHECK(prompt.find("Please select the most appropriate label") != std::string::npos);
    CHECK(prompt.find("1. The weather is rainy") != std::string::npos);
    return std::string("1: b\n2: ?\n");
  });
  const auto labels = remote.classify(sentences);
  REQUIRE(labels.size() == 2);
  CHECK(labels[0] == Dimension::location);      // remote override
  CHECK(labels[1] == Dimension::motion_state);  // rule fallback kept

  citypipe::RemoteClassifier failing(
      [](const std::string&) -> std::string { throw std::runtime_error("unreachable"); });
  const auto fallback = failing.classify(sentences);
  CHECK(fallback[0] == Dimension::environment);
  CHECK(fallback[1] == Dimension::motion_state);
}

TEST_CASE("assemble_dataset emits long plus short records per role") {
  const auto tuple = fixture_tuple();
  const std::filesystem::path root = testsupport::make_temp_dir("qa_assets");
  citypipe::write_file(root / "g.png", "fake");
  citypipe::write_file(root / "l.png", "fake");
  std::map<std::string, citypipe::RenderedViews> manifest{
      {tuple.id(), {"g.png", std::optional<std::string>("l.png")}}};

  const auto built = citypipe::assemble_dataset({&tuple}, manifest,
                                                DatasetMode::single_round, root);
  CHECK(built.diagnostics.empty());
  // ped: 1 long + 4 shorts; veh: 1 long + 3 shorts
  REQUIRE(built.records.size() == 9);
  CHECK(built.records[0].id == "s/v/phase0#pedestrian-long");
  CHECK(built.records[0].question ==
        citypipe::build_long_prompt(Role::pedestrian, PromptPerspective::ego));
  CHECK(built.records[0].answer == tuple.pedestrian_caption);
  CHECK(built.records[0].image_paths == std::vector<std::string>{"g.png", "l.png"});
  for (const InstructionRecord& record : built.records) {
    CHECK_FALSE(record.round_group.has_value());
  }

  // multi-round groups the same pairs under one conversation id per tuple
  const auto multi = citypipe::assemble_dataset({&tuple}, manifest,
                                                DatasetMode::multi_round, root);
  REQUIRE(multi.records.size() == 9);
  for (const InstructionRecord& record : multi.records) {
    REQUIRE(record.round_group.has_value());
    CHECK(*record.round_group == tuple.id());
  }

  // empty tuple list -> empty dataset
  CHECK(citypipe::assemble_dataset({}, manifest, DatasetMode::single_round, root)
            .records.empty());
}

TEST_CASE("a tuple with four short pairs and two long pairs yields six records") {
  citypipe::SegmentTuple tuple = fixture_tuple();
  // two dimensions per caption
  tuple.pedestrian_caption =
      "The pedestrian is a man wearing a black jacket. He walks slowly across the crossing.";
  tuple.vehicle_caption =
      "The vehicle is positioned behind the pedestrian. The road is wet under rainy weather.";
  const std::filesystem::path root = testsupport::make_temp_dir("qa_six");
  citypipe::write_file(root / "g.png", "fake");
  std::map<std::string, citypipe::RenderedViews> manifest{
      {tuple.id(), {"g.png", std::nullopt}}};
  const auto built =
      citypipe::assemble_dataset({&tuple}, manifest, DatasetMode::single_round, root);
  CHECK(built.records.size() == 6);
}

TEST_CASE("assemble_dataset skips tuples with missing rendered images") {
  const auto tuple = fixture_tuple();
  const std::filesystem::path root = testsupport::make_temp_dir("qa_missing");
  std::map<std::string, citypipe::RenderedViews> manifest{
      {tuple.id(), {"absent.png", std::nullopt}}};
  const auto built =
      citypipe::assemble_dataset({&tuple}, manifest, DatasetMode::single_round, root);
  CHECK(built.records.empty());
  REQUIRE(built.diagnostics.size() == 1);
  CHECK(built.diagnostics[0].message.find("missing on disk") != std::string::npos);

  // not in the manifest at all
  const auto unmapped = citypipe::assemble_dataset({&tuple}, {}, DatasetMode::single_round, root);
  CHECK(unmapped.records.empty());
  REQUIRE(unmapped.diagnostics.size() == 1);
}

TEST_CASE("dataset json uses the conversation layout with image tokens") {
  const auto tuple = fixture_tuple();
  const std::filesystem::path root = testsupport::make_temp_dir("qa_json");
  citypipe::write_file(root / "g.png", "fake");
  citypipe::write_file(root / "l.png", "fake");
  std::map<std::string, citypipe::RenderedViews> manifest{
      {tuple.id(), {"g.png", std::optional<std::string>("l.png")}}};

  const auto single = citypipe::assemble_dataset({&tuple}, manifest,
                                                 DatasetMode::single_round, root);
  const nlohmann::json single_doc = citypipe::dataset_to_json(single.records);
  REQUIRE(single_doc.size() == 9);
  const nlohmann::json& first = single_doc[0];
  CHECK(first.at("image").size() == 2);
  REQUIRE(first.at("conversations").size() == 2);
  CHECK(first["conversations"][0]["from"] == "human");
  const std::string human = first["conversations"][0]["value"].get<std::string>();
  CHECK(human.rfind("<image>\n<image>\n", 0) == 0);
  CHECK(first["conversations"][1]["from"] == "gpt");

  const auto multi = citypipe::assemble_dataset({&tuple}, manifest,
                                                DatasetMode::multi_round, root);
  const nlohmann::json multi_doc = citypipe::dataset_to_json(multi.records);
  REQUIRE(multi_doc.size() == 1);
  CHECK(multi_doc[0]["conversations"].size() == 18);  // 9 QA pairs
  const std::string head = multi_doc[0]["conversations"][0]["value"].get<std::string>();
  CHECK(head.rfind("<image>\n", 0) == 0);
  const std::string second = multi_doc[0]["conversations"][2]["value"].get<std::string>();
  CHECK(second.find("<image>") == std::string::npos);  // token only on the first turn
}
