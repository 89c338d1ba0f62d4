#include "citypipe/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "httplib.h"

#include "citypipe/log.hpp"
#include "citypipe/util.hpp"

namespace citypipe {

namespace {

struct ParsedUrl {
  std::string host_port;  // scheme://host:port for httplib::Client
};

ParsedUrl parse_url(const std::string& url) {
  if (url.empty()) {
    throw chat_error("endpoint url is empty", false);
  }
  return ParsedUrl{url};
}

}  // namespace

nlohmann::json chat_request_body(const EndpointConfig& cfg, const std::vector<ChatTurn>& turns) {
  nlohmann::json messages = nlohmann::json::array();
  for (const ChatTurn& turn : turns) {
    if (turn.role == TurnRole::assistant) {
      if (!turn.image_payloads.empty()) {
        throw chat_error("assistant turns cannot carry images", false);
      }
      messages.push_back({{"role", "assistant"}, {"content", turn.text}});
      continue;
    }
    if (turn.image_payloads.empty()) {
      messages.push_back({{"role", "user"}, {"content", turn.text}});
      continue;
    }
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", turn.text}});
    for (const std::string& payload : turn.image_payloads) {
      content.push_back(
          {{"type", "image_url"},
           {"image_url", {{"url", "data:image/png;base64," + base64_encode(payload)}}}});
    }
    messages.push_back({{"role", "user"}, {"content", std::move(content)}});
  }
  return nlohmann::json{{"model", cfg.model},
                        {"temperature", cfg.temperature},
                        {"max_tokens", cfg.max_tokens},
                        {"messages", std::move(messages)}};
}

std::string chat(const EndpointConfig& cfg, const std::vector<ChatTurn>& turns) {
  const ParsedUrl url = parse_url(cfg.url);
  const std::string body = chat_request_body(cfg, turns).dump();
  if (body.size() > cfg.payload_limit_bytes) {
    throw chat_error("request payload " + std::to_string(body.size()) +
                         " bytes exceeds limit " + std::to_string(cfg.payload_limit_bytes),
                     false);
  }

  httplib::Headers headers;
  if (const char* token = std::getenv(cfg.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::string last_error;
  for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
    if (attempt > 1) {
      const int delay = cfg.retry_base_ms * (1 << (attempt - 2));
      logging::debug("chat_retry", {{"attempt", attempt}, {"delay_ms", delay}});
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    httplib::Client client(url.host_port);
    client.set_connection_timeout(cfg.timeout_sec, 0);
    client.set_read_timeout(cfg.timeout_sec, 0);
    client.set_write_timeout(cfg.timeout_sec, 0);

    httplib::Result res = client.Post(cfg.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;  // retryable
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "endpoint returned status " + std::to_string(res->status);
      continue;  // retryable
    }
    if (res->status != 200) {
      throw chat_error("endpoint " + cfg.url + cfg.path + " returned status " +
                           std::to_string(res->status) + ": " + res->body,
                       false, res->status);
    }
    try {
      const nlohmann::json doc = nlohmann::json::parse(res->body);
      return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw chat_error(std::string("malformed response body: ") + e.what(), false,
                       res->status);
    }
  }
  throw chat_error("retries exhausted after " + std::to_string(cfg.max_attempts) +
                       " attempts: " + last_error,
                   true);
}

OrderingMode ordering_mode_from_string(const std::string& s) {
  if (s == "independent") return OrderingMode::independent;
  if (s == "pedestrian-vehicle" || s == "pedestrian_vehicle") return OrderingMode::pedestrian_vehicle;
  if (s == "vehicle-pedestrian" || s == "vehicle_pedestrian") return OrderingMode::vehicle_pedestrian;
  throw std::invalid_argument("unknown ordering mode '" + s + "'");
}

const char* to_string(OrderingMode m) {
  switch (m) {
    case OrderingMode::independent: return "independent";
    case OrderingMode::pedestrian_vehicle: return "pedestrian-vehicle";
    case OrderingMode::vehicle_pedestrian: return "vehicle-pedestrian";
  }
  return "independent";
}

ViewParts view_parts_from_string(const std::string& s) {
  if (s == "joint") return ViewParts::joint;
  if (s == "global-only" || s == "global_only") return ViewParts::global_only;
  if (s == "local-only" || s == "local_only") return ViewParts::local_only;
  throw std::invalid_argument("unknown view parts '" + s + "'");
}

const char* to_string(ViewParts v) {
  switch (v) {
    case ViewParts::joint: return "joint";
    case ViewParts::global_only: return "global-only";
    case ViewParts::local_only: return "local-only";
  }
  return "joint";
}

namespace {

// Global first, then local, per the joint-view input convention.
std::vector<std::string> segment_images(const SegmentInput& input, ViewParts parts) {
  std::vector<std::string> images;
  switch (parts) {
    case ViewParts::joint:
      images.push_back(input.global_image);
      if (input.local_image) images.push_back(*input.local_image);
      break;
    case ViewParts::global_only:
      images.push_back(input.global_image);
      break;
    case ViewParts::local_only:
      images.push_back(input.local_image ? *input.local_image : input.global_image);
      break;
  }
  return images;
}

}  // namespace

CaptionPair run_segment(const EndpointConfig& cfg, const SegmentInput& input, OrderingMode mode,
                        const QuestionTemplates& templates, const ChatOptions& options) {
  const std::vector<std::string> images = segment_images(input, options.parts);
  const auto started = std::chrono::steady_clock::now();

  CaptionPair pair;
  pair.scenario_id = input.scenario_id;
  pair.phase_index = input.phase_index;
  pair.mode = mode;

  const auto ask = [&](const std::string& question, std::vector<ChatTurn>& history,
                       const char* role) {
    const bool first_turn = history.empty();
    history.push_back(ChatTurn::user(
        question, first_turn || options.resend_images ? images : std::vector<std::string>{}));
    try {
      const std::string answer = chat(cfg, history);
      history.push_back(ChatTurn::assistant(answer));
      return answer;
    } catch (const chat_error& e) {
      throw chat_error(std::string(role) + " question failed: " + e.what(), e.retryable,
                       e.status);
    }
  };

  if (mode == OrderingMode::independent) {
    std::vector<ChatTurn> veh_history;
    pair.vehicle_caption = ask(templates.vehicle, veh_history, "vehicle");
    std::vector<ChatTurn> ped_history;
    pair.pedestrian_caption = ask(templates.pedestrian, ped_history, "pedestrian");
  } else if (mode == OrderingMode::vehicle_pedestrian) {
    std::vector<ChatTurn> history;
    pair.vehicle_caption = ask(templates.vehicle, history, "vehicle");
    pair.pedestrian_caption = ask(templates.pedestrian, history, "pedestrian");
  } else {
    std::vector<ChatTurn> history;
    pair.pedestrian_caption = ask(templates.pedestrian, history, "pedestrian");
    pair.vehicle_caption = ask(templates.vehicle, history, "vehicle");
  }

  pair.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                              started)
                        .count();
  return pair;
}

BatchResult run_batch(const EndpointConfig& cfg, const std::vector<SegmentInput>& segments,
                      OrderingMode mode, const QuestionTemplates& templates,
                      const ChatOptions& options, int parallelism) {
  if (parallelism < 1) {
    throw std::invalid_argument("parallelism must be >= 1");
  }
  BatchResult result;
  std::vector<std::optional<CaptionPair>> slots(segments.size());
  std::vector<std::optional<SegmentFailure>> failures(segments.size());
  std::atomic<std::size_t> next{0};

  const auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= segments.size()) {
        return;
      }
      try {
        slots[i] = run_segment(cfg, segments[i], mode, templates, options);
      } catch (const chat_error& e) {
        const std::string what = e.what();
        const std::string role =
            what.find("pedestrian question") != std::string::npos ? "pedestrian" : "vehicle";
        failures[i] = SegmentFailure{segments[i].scenario_id, segments[i].phase_index, role, what};
      } catch (const std::exception& e) {
        failures[i] = SegmentFailure{segments[i].scenario_id, segments[i].phase_index, "", e.what()};
      }
    }
  };

  const int workers = std::min<int>(parallelism, static_cast<int>(segments.size()));
  std::vector<std::thread> threads;
  for (int i = 0; i < std::max(1, workers); ++i) {
    threads.emplace_back(worker);
  }
  for (std::thread& t : threads) {
    t.join();
  }

  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (slots[i]) {
      result.pairs.push_back(std::move(*slots[i]));
    } else if (failures[i]) {
      logging::error("segment_failed", {{"scenario", failures[i]->scenario_id},
                                        {"phase", failures[i]->phase_index},
                                        {"message", failures[i]->message}});
      result.failures.push_back(std::move(*failures[i]));
    }
  }
  std::sort(result.pairs.begin(), result.pairs.end(), [](const CaptionPair& a, const CaptionPair& b) {
    return std::tie(a.scenario_id, a.phase_index) < std::tie(b.scenario_id, b.phase_index);
  });
  std::sort(result.failures.begin(), result.failures.end(),
            [](const SegmentFailure& a, const SegmentFailure& b) {
              return std::tie(a.scenario_id, a.phase_index) < std::tie(b.scenario_id, b.phase_index);
            });
  return result;
}

}  // namespace citypipe
