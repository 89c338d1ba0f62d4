#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace citypipe {

enum class TurnRole { user, assistant };

struct ChatTurn {
  TurnRole role = TurnRole::user;
  std::string text;
  // Raw image bytes (PNG/JPEG), base64-encoded at serialization time.
  // Assistant turns never carry images.
  std::vector<std::string> image_payloads;

  static ChatTurn user(std::string text, std::vector<std::string> images = {}) {
    return ChatTurn{TurnRole::user, std::move(text), std::move(images)};
  }
  static ChatTurn assistant(std::string text) {
    return ChatTurn{TurnRole::assistant, std::move(text), {}};
  }
};

struct EndpointConfig {
  std::string url;  // e.g. http://127.0.0.1:8000
  std::string path = "/v1/chat/completions";
  std::string model = "default";
  double temperature = 0.0;
  int max_tokens = 1024;
  int max_attempts = 3;
  int retry_base_ms = 200;
  int timeout_sec = 120;
  std::size_t payload_limit_bytes = 64ull << 20;
  std::string token_env = "CITYPIPE_API_TOKEN";
};

struct chat_error : std::runtime_error {
  chat_error(const std::string& message, bool retryable_, int status_ = 0)
      : std::runtime_error(message), retryable(retryable_), status(status_) {}
  bool retryable = false;
  int status = 0;
};

nlohmann::json chat_request_body(const EndpointConfig& cfg, const std::vector<ChatTurn>& turns);

// Sends the conversation and returns the assistant text. Transient
// transport failures and 429/5xx responses retry with exponential backoff
// up to max_attempts.
std::string chat(const EndpointConfig& cfg, const std::vector<ChatTurn>& turns);

enum class OrderingMode { independent, pedestrian_vehicle, vehicle_pedestrian };
enum class ViewParts { joint, global_only, local_only };

OrderingMode ordering_mode_from_string(const std::string& s);
const char* to_string(OrderingMode m);
ViewParts view_parts_from_string(const std::string& s);
const char* to_string(ViewParts v);

struct CaptionPair {
  std::string scenario_id;
  int phase_index = 0;
  std::string pedestrian_caption;
  std::string vehicle_caption;
  OrderingMode mode = OrderingMode::independent;
  double latency_ms = 0.0;
};

struct QuestionTemplates {
  std::string pedestrian;
  std::string vehicle;
};

struct ChatOptions {
  ViewParts parts = ViewParts::joint;
  // Sequential modes keep one history; images attach to the first turn
  // only unless resend_images is set.
  bool resend_images = false;
};

struct SegmentInput {
  std::string scenario_id;
  int phase_index = 0;
  std::string global_image;                 // raw bytes
  std::optional<std::string> local_image;   // raw bytes
};

CaptionPair run_segment(const EndpointConfig& cfg, const SegmentInput& input, OrderingMode mode,
                        const QuestionTemplates& templates, const ChatOptions& options);

struct SegmentFailure {
  std::string scenario_id;
  int phase_index = 0;
  std::string role;  // which question failed
  std::string message;
};

struct BatchResult {
  std::vector<CaptionPair> pairs;      // sorted by (scenario_id, phase_index)
  std::vector<SegmentFailure> failures;
};

// Bounded-parallel execution; conversations stay strictly sequential
// within a segment. Per-segment failures are collected, not fatal.
BatchResult run_batch(const EndpointConfig& cfg, const std::vector<SegmentInput>& segments,
                      OrderingMode mode, const QuestionTemplates& templates,
                      const ChatOptions& options, int parallelism);

}  // namespace citypipe
