#include "citypipe/qa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

#include "citypipe/log.hpp"

namespace citypipe {

namespace {

constexpr const char* kPedestrianTemplate =
    "This picture shows the relationship between the pedestrian in the green box and the "
    "vehicle in the blue box. Describe the pedestrian in the green box or the pedestrian "
    "closest to the vehicle based on age, height, clothing, line of sight, relative position "
    "to the vehicle, movement status, weather conditions, and road environment.";

constexpr const char* kVehicleTemplate =
    "This picture shows the relationship between the vehicle in the blue box and the "
    "pedestrian in the green box. Describe the vehicle in the blue box or the vehicle "
    "closest to the pedestrian based on the relative position to the pedestrian, driving "
    "status, weather conditions, and road environment. And describe the age, height, and "
    "clothing of the pedestrian.";

constexpr const char* kBoxedVehiclePhrase = "the vehicle in the blue box";
constexpr const char* kEgoVehiclePhrase = "ego-vehicle";

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string lowercase(const std::string& text) {
  std::string out = text;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool word_boundary(const std::string& text, std::size_t pos, std::size_t len) {
  const auto is_word = [](unsigned char c) { return std::isalnum(c) != 0; };
  const bool left_ok = pos == 0 || !is_word(static_cast<unsigned char>(text[pos - 1]));
  const bool right_ok =
      pos + len >= text.size() || !is_word(static_cast<unsigned char>(text[pos + len]));
  return left_ok && right_ok;
}

// Counts whole-word (or whole-phrase) occurrences of `key` in lowercase text.
int keyword_hits(const std::string& text, const std::string& key) {
  int hits = 0;
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    if (word_boundary(text, pos, key.size())) {
      ++hits;
    }
    pos += key.size();
  }
  return hits;
}

// The rule table. Keys are matched whole-word against the lowercased
// sentence; the dimension with the most hits wins and ties resolve by the
// order below (environment strongest).
const std::array<std::pair<Dimension, std::vector<std::string>>, 4>& keyword_table() {
  static const std::array<std::pair<Dimension, std::vector<std::string>>, 4> table = {{
      {Dimension::environment,
       {"weather", "rain", "raining", "rainy", "snow", "snowing", "sunny", "cloudy",
        "overcast", "wet", "dry", "bright", "dim", "dark", "daylight", "night", "nighttime",
        "lighting", "illuminated", "streetlight", "asphalt", "paved", "road surface",
        "traffic volume", "congested", "urban", "residential", "intersection", "signal",
        "visibility", "clear sky"}},
      {Dimension::motion_state,
       {"walking", "walked", "walks", "running", "ran", "runs", "standing", "stood", "stops",
        "stopped", "moving", "moves", "movement", "crossing", "crossed", "crosses", "speed",
        "slowly", "quickly", "accelerating", "decelerating", "driving", "drove", "drives",
        "turning", "turned", "traveling", "travelling", "proceeding", "approaching",
        "waiting", "stationary", "motion"}},
      {Dimension::location,
       {"position", "positioned", "located", "location", "left", "right", "front",
        "in front", "behind", "ahead", "near", "close to", "far from", "beside", "next to",
        "diagonally", "opposite", "across", "distance", "meters away", "sidewalk",
        "crosswalk", "side", "alongside", "corner"}},
      {Dimension::attributes,
       {"wearing", "dressed", "jacket", "shirt", "t-shirt", "trousers", "pants", "shoes",
        "hat", "helmet", "age", "aged", "years old", "20s", "30s", "40s", "50s", "60s",
        "height", "tall", "male", "female", "man", "woman", "boy", "girl", "clothing",
        "glasses", "line of sight", "looking", "gazing", "glancing", "sight", "hair",
        "slim", "build"}},
  }};
  return table;
}

}  // namespace

const char* to_string(Role r) { return r == Role::pedestrian ? "pedestrian" : "vehicle"; }

const char* to_string(Dimension d) {
  switch (d) {
    case Dimension::attributes: return "attributes";
    case Dimension::location: return "location";
    case Dimension::motion_state: return "motion_state";
    case Dimension::environment: return "environment";
  }
  return "attributes";
}

std::string build_long_prompt(Role role, PromptPerspective perspective) {
  std::string text = role == Role::pedestrian ? kPedestrianTemplate : kVehicleTemplate;
  if (perspective == PromptPerspective::ego) {
    text = replace_all(std::move(text), kBoxedVehiclePhrase, kEgoVehiclePhrase);
  }
  return text;
}

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> sentences;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    current.push_back(c);
    if (c == '.' || c == '?' || c == '!') {
      const bool at_end = i + 1 >= text.size();
      const bool before_space = !at_end && std::isspace(static_cast<unsigned char>(text[i + 1]));
      if (at_end || before_space) {
        // trim
        const auto first = current.find_first_not_of(" \t\r\n");
        const auto last = current.find_last_not_of(" \t\r\n");
        if (first != std::string::npos) {
          sentences.push_back(current.substr(first, last - first + 1));
        }
        current.clear();
      }
    }
  }
  const auto first = current.find_first_not_of(" \t\r\n");
  if (first != std::string::npos) {
    const auto last = current.find_last_not_of(" \t\r\n");
    sentences.push_back(current.substr(first, last - first + 1));
  }
  return sentences;
}

Dimension RuleClassifier::classify_sentence(const std::string& sentence) {
  const std::string lower = lowercase(sentence);
  Dimension best = Dimension::attributes;
  int best_hits = 0;
  for (const auto& [dimension, keys] : keyword_table()) {
    int hits = 0;
    for (const std::string& key : keys) {
      hits += keyword_hits(lower, key);
    }
    if (hits > best_hits) {  // table order is the tie-break precedence
      best = dimension;
      best_hits = hits;
    }
  }
  return best;
}

std::vector<Dimension> RuleClassifier::classify(const std::vector<std::string>& sentences) {
  std::vector<Dimension> out;
  out.reserve(sentences.size());
  for (const std::string& sentence : sentences) {
    out.push_back(classify_sentence(sentence));
  }
  return out;
}

std::string RemoteClassifier::labelling_prompt(const std::vector<std::string>& sentences) {
  std::ostringstream prompt;
  prompt << "Please select the most appropriate label for each descriptive text from the "
            "following options, and format the output by providing the text index followed "
            "by the letter a, b, c, d, or e. Each selection should be on a new line.\n"
            "Options: a. attributes b. location c. motion state d. environment e. other\n";
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    prompt << (i + 1) << ". " << sentences[i] << "\n";
  }
  return prompt.str();
}

std::vector<Dimension> RemoteClassifier::classify(const std::vector<std::string>& sentences) {
  std::vector<Dimension> labels = fallback_.classify(sentences);
  if (sentences.empty()) {
    return labels;
  }
  std::string reply;
  try {
    reply = complete_(labelling_prompt(sentences));
  } catch (const std::exception& e) {
    logging::warn("remote_classifier_fallback", {{"reason", e.what()}});
    return labels;
  }
  std::istringstream lines(reply);
  std::string line;
  while (std::getline(lines, line)) {
    std::size_t pos = 0;
    while (pos < line.size() && !std::isdigit(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos == line.size()) continue;
    std::size_t end = pos;
    while (end < line.size() && std::isdigit(static_cast<unsigned char>(line[end]))) ++end;
    const int index = std::stoi(line.substr(pos, end - pos));
    if (index < 1 || index > static_cast<int>(sentences.size())) continue;
    char letter = 0;
    for (std::size_t i = end; i < line.size(); ++i) {
      const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(line[i])));
      if (c >= 'a' && c <= 'e') {
        letter = c;
        break;
      }
    }
    switch (letter) {
      case 'a': labels[static_cast<std::size_t>(index - 1)] = Dimension::attributes; break;
      case 'b': labels[static_cast<std::size_t>(index - 1)] = Dimension::location; break;
      case 'c': labels[static_cast<std::size_t>(index - 1)] = Dimension::motion_state; break;
      case 'd': labels[static_cast<std::size_t>(index - 1)] = Dimension::environment; break;
      default: break;  // 'e' or unparseable keeps the rule-based label
    }
  }
  return labels;
}

std::vector<LabeledSentence> split_description(const std::string& desc,
                                               SentenceClassifier* classifier) {
  const std::vector<std::string> sentences = split_sentences(desc);
  RuleClassifier rules;
  SentenceClassifier& cls = classifier ? *classifier : rules;
  const std::vector<Dimension> labels = cls.classify(sentences);
  std::vector<LabeledSentence> out;
  out.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.push_back(LabeledSentence{sentences[i], labels[i]});
  }
  return out;
}

std::string short_question(Role role, Dimension dimension) {
  if (role == Role::pedestrian) {
    switch (dimension) {
      case Dimension::attributes:
        return "Describe the age, height, and clothing of the pedestrian.";
      case Dimension::location:
        return "Describe the position of the pedestrian relative to the vehicle.";
      case Dimension::motion_state:
        return "Describe the movement status and line of sight of the pedestrian.";
      case Dimension::environment:
        return "Describe the weather conditions and road environment around the pedestrian.";
    }
  }
  switch (dimension) {
    case Dimension::attributes:
      return "Describe the age, height, and clothing of the pedestrian involved with the vehicle.";
    case Dimension::location:
      return "Describe the position of the vehicle relative to the pedestrian.";
    case Dimension::motion_state:
      return "Describe the driving status of the vehicle.";
    case Dimension::environment:
      return "Describe the weather conditions and road environment around the vehicle.";
  }
  return {};
}

std::vector<ShortQa> build_short_qa(const std::string& desc, Role role,
                                    SentenceClassifier* classifier) {
  const std::vector<LabeledSentence> labeled = split_description(desc, classifier);
  constexpr std::array<Dimension, kDimensionCount> order = {
      Dimension::attributes, Dimension::location, Dimension::motion_state,
      Dimension::environment};
  std::vector<ShortQa> out;
  for (Dimension dimension : order) {
    std::string answer;
    for (const LabeledSentence& ls : labeled) {
      if (ls.dimension != dimension) continue;
      if (!answer.empty()) answer += " ";
      answer += ls.sentence;
    }
    if (!answer.empty()) {
      out.push_back(ShortQa{dimension, short_question(role, dimension), std::move(answer)});
    }
  }
  return out;
}

DatasetMode dataset_mode_from_string(const std::string& s) {
  if (s == "single_round" || s == "single-round") return DatasetMode::single_round;
  if (s == "multi_round" || s == "multi-round") return DatasetMode::multi_round;
  throw std::invalid_argument("unknown dataset mode '" + s + "'");
}

const char* to_string(DatasetMode m) {
  return m == DatasetMode::single_round ? "single_round" : "multi_round";
}

DatasetBuildResult assemble_dataset(const std::vector<const SegmentTuple*>& tuples,
                                    const std::map<std::string, RenderedViews>& manifest,
                                    DatasetMode mode, const std::filesystem::path& asset_root,
                                    SentenceClassifier* classifier) {
  DatasetBuildResult result;
  for (const SegmentTuple* tuple : tuples) {
    const std::string tuple_id = tuple->id();
    const auto views_it = manifest.find(tuple_id);
    if (views_it == manifest.end()) {
      result.diagnostics.push_back({tuple_id, "no rendered views in manifest"});
      continue;
    }
    std::vector<std::string> images{views_it->second.global};
    if (views_it->second.local) {
      images.push_back(*views_it->second.local);
    }
    bool missing = false;
    for (const std::string& image : images) {
      if (!std::filesystem::exists(asset_root / image)) {
        result.diagnostics.push_back({tuple_id, "rendered image missing on disk: " + image});
        missing = true;
      }
    }
    if (missing) {
      continue;
    }

    const PromptPerspective perspective = tuple->perspective == Perspective::vehicle
                                              ? PromptPerspective::ego
                                              : PromptPerspective::overhead;
    const std::optional<std::string> group =
        mode == DatasetMode::multi_round ? std::optional<std::string>(tuple_id) : std::nullopt;

    for (Role role : {Role::pedestrian, Role::vehicle}) {
      const std::string& caption =
          role == Role::pedestrian ? tuple->pedestrian_caption : tuple->vehicle_caption;
      if (caption.empty()) {
        result.diagnostics.push_back(
            {tuple_id, std::string("empty ") + to_string(role) + " caption; long QA skipped"});
        continue;
      }
      result.records.push_back(InstructionRecord{
          tuple_id + "#" + to_string(role) + "-long", images,
          build_long_prompt(role, perspective), caption, group});
      for (const ShortQa& qa : build_short_qa(caption, role, classifier)) {
        result.records.push_back(InstructionRecord{
            tuple_id + "#" + to_string(role) + "-short-" + to_string(qa.dimension), images,
            qa.question, qa.answer, group});
      }
    }
  }
  return result;
}

nlohmann::json dataset_to_json(const std::vector<InstructionRecord>& records) {
  nlohmann::json doc = nlohmann::json::array();
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t end = i + 1;
    if (records[i].round_group) {
      while (end < records.size() && records[end].round_group == records[i].round_group) {
        ++end;
      }
    }
    const InstructionRecord& head = records[i];
    std::string image_tokens;
    for (std::size_t k = 0; k < head.image_paths.size(); ++k) {
      image_tokens += "<image>\n";
    }
    nlohmann::json conversations = nlohmann::json::array();
    for (std::size_t k = i; k < end; ++k) {
      conversations.push_back(
          {{"from", "human"},
           {"value", (k == i ? image_tokens : std::string()) + records[k].question}});
      conversations.push_back({{"from", "gpt"}, {"value", records[k].answer}});
    }
    doc.push_back({{"id", head.round_group ? *head.round_group : head.id},
                   {"image", head.image_paths},
                   {"conversations", std::move(conversations)}});
    i = end;
  }
  return doc;
}

}  // namespace citypipe
