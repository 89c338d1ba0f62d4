#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "citypipe/corpus.hpp"

namespace citypipe {

enum class Role { pedestrian, vehicle };
enum class PromptPerspective { overhead, ego };

const char* to_string(Role r);

// The two long-prompt templates; the ego variant substitutes "ego-vehicle"
// for "the vehicle in the blue box".
std::string build_long_prompt(Role role, PromptPerspective perspective);

enum class Dimension { attributes, location, motion_state, environment };
constexpr int kDimensionCount = 4;

const char* to_string(Dimension d);

// Terminal-punctuation sentence segmentation ('.', '?', '!').
std::vector<std::string> split_sentences(const std::string& text);

class SentenceClassifier {
 public:
  virtual ~SentenceClassifier() = default;
  virtual std::vector<Dimension> classify(const std::vector<std::string>& sentences) = 0;
};

// Deterministic keyword scoring against a fixed table; ties resolve by
// precedence environment > motion_state > location > attributes, and a
// sentence matching nothing counts as attributes.
class RuleClassifier : public SentenceClassifier {
 public:
  std::vector<Dimension> classify(const std::vector<std::string>& sentences) override;
  static Dimension classify_sentence(const std::string& sentence);
};

// Delegates labelling to a completion callable (one prompt in, raw reply
// out); any unparseable or unreachable result falls back to the rules.
class RemoteClassifier : public SentenceClassifier {
 public:
  using CompleteFn = std::function<std::string(const std::string& prompt)>;
  explicit RemoteClassifier(CompleteFn complete) : complete_(std::move(complete)) {}

  std::vector<Dimension> classify(const std::vector<std::string>& sentences) override;

  static std::string labelling_prompt(const std::vector<std::string>& sentences);

 private:
  CompleteFn complete_;
  RuleClassifier fallback_;
};

struct LabeledSentence {
  std::string sentence;
  Dimension dimension;
};

std::vector<LabeledSentence> split_description(const std::string& desc,
                                               SentenceClassifier* classifier = nullptr);

struct ShortQa {
  Dimension dimension;
  std::string question;
  std::string answer;
};

std::string short_question(Role role, Dimension dimension);

// One QA pair per dimension that has sentences; sentences keep source order.
std::vector<ShortQa> build_short_qa(const std::string& desc, Role role,
                                    SentenceClassifier* classifier = nullptr);

struct InstructionRecord {
  std::string id;
  std::vector<std::string> image_paths;  // global then local, relative to the asset root
  std::string question;
  std::string answer;
  std::optional<std::string> round_group;
};

enum class DatasetMode { single_round, multi_round };

DatasetMode dataset_mode_from_string(const std::string& s);
const char* to_string(DatasetMode m);

struct RenderedViews {
  std::string global;
  std::optional<std::string> local;
};

struct DatasetBuildResult {
  std::vector<InstructionRecord> records;
  std::vector<Diagnostic> diagnostics;
};

// Builds instruction records for the given tuples: per role one long QA
// plus the short QA pairs split from that role's caption. Tuples without
// rendered images (or with images missing on disk) are skipped with a
// diagnostic. multi_round shares one round_group per tuple.
DatasetBuildResult assemble_dataset(const std::vector<const SegmentTuple*>& tuples,
                                    const std::map<std::string, RenderedViews>& manifest,
                                    DatasetMode mode, const std::filesystem::path& asset_root,
                                    SentenceClassifier* classifier = nullptr);

// Instruction-tuning JSON: records sharing a round_group merge into one
// multi-turn conversation; an "<image>" token per image prefixes the first
// human turn.
nlohmann::json dataset_to_json(const std::vector<InstructionRecord>& records);

}  // namespace citypipe
