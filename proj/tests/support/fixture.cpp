#include "support/fixture.hpp"

#include <atomic>
#include <chrono>
#include <unistd.h>

#include <opencv2/core.hpp>

#include "httplib.h"

#include "citypipe/util.hpp"
#include "citypipe/visual_prompt.hpp"

namespace testsupport {

namespace fs = std::filesystem;

fs::path test_dir() { return fs::path(CITYPIPE_TEST_DIR); }

fs::path fixture_annotations() { return test_dir() / "fixtures" / "annotations.json"; }

fs::path make_temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("citypipe_" + tag + "_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter.fetch_add(1)));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_synthetic_frame(const fs::path& path, const std::string& key) {
  const int seed = static_cast<int>(citypipe::fnv1a64(key) % 251);
  cv::Mat frame(48, 64, CV_8UC3);
  for (int y = 0; y < frame.rows; ++y) {
    for (int x = 0; x < frame.cols; ++x) {
      frame.at<cv::Vec3b>(y, x) =
          cv::Vec3b(static_cast<unsigned char>((x * 7 + y * 3 + seed) % 256),
                    static_cast<unsigned char>((x * 5 + y * 11 + 2 * seed) % 256),
                    static_cast<unsigned char>((x * 13 + y * 17 + 3 * seed) % 256));
    }
  }
  citypipe::save_png(path, frame);
}

void materialize_frames(const citypipe::Corpus& corpus, const fs::path& frames_root) {
  for (const citypipe::ScenarioRecord& scenario : corpus.scenarios) {
    for (const citypipe::ViewRecord& view : scenario.views) {
      for (const citypipe::SegmentTuple& tuple : view.segments) {
        for (const citypipe::FrameRef& frame : tuple.frames) {
          write_synthetic_frame(frames_root / frame.image, frame.image);
        }
      }
    }
  }
}

const char* kMockPedestrianCaption =
    "The pedestrian is a man in his 30s wearing a black jacket. He is on the right side of "
    "the vehicle near the crosswalk. He walks slowly across the crossing. The weather is "
    "rainy and the road surface is wet.";

const char* kMockVehicleCaption =
    "The vehicle is positioned behind the pedestrian at a short distance. It is moving "
    "forward slowly. The road is wet under rainy weather.";

std::string message_text(const nlohmann::json& message) {
  const nlohmann::json& content = message.at("content");
  if (content.is_string()) {
    return content.get<std::string>();
  }
  for (const nlohmann::json& part : content) {
    if (part.value("type", "") == "text") {
      return part.at("text").get<std::string>();
    }
  }
  return {};
}

std::string default_mock_answer(const nlohmann::json& body) {
  const nlohmann::json& messages = body.at("messages");
  const std::string question = message_text(messages.back());
  if (question.find("Describe the pedestrian") != std::string::npos) {
    return kMockPedestrianCaption;
  }
  return kMockVehicleCaption;
}

struct MockEndpoint::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  AnswerFn answer;

  mutable std::mutex mutex;
  std::vector<nlohmann::json> requests;
  std::vector<std::string> auth_headers;
  std::vector<int> status_script;
  std::size_t script_pos = 0;
  std::string raw_response;
};

MockEndpoint::MockEndpoint(AnswerFn answer) : impl_(std::make_unique<Impl>()) {
  impl_->answer = std::move(answer);
  impl_->server.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) {
                       nlohmann::json body = nlohmann::json::parse(req.body);
                       int status = 200;
                       std::string raw;
                       {
                         std::lock_guard<std::mutex> lock(impl_->mutex);
                         impl_->requests.push_back(body);
                         impl_->auth_headers.push_back(
                             req.get_header_value("Authorization"));
                         if (impl_->script_pos < impl_->status_script.size()) {
                           status = impl_->status_script[impl_->script_pos++];
                         }
                         raw = impl_->raw_response;
                       }
                       if (status != 200) {
                         res.status = status;
                         res.set_content("scripted failure", "text/plain");
                         return;
                       }
                       if (!raw.empty()) {
                         res.set_content(raw, "application/json");
                         return;
                       }
                       const nlohmann::json reply{
                           {"choices",
                            {{{"message",
                               {{"role", "assistant"}, {"content", impl_->answer(body)}}}}}}};
                       res.set_content(reply.dump(), "application/json");
                     });
  impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
  impl_->thread = std::thread([this]() { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockEndpoint::~MockEndpoint() {
  impl_->server.stop();
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  }
}

std::string MockEndpoint::url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->port);
}

void MockEndpoint::set_status_script(std::vector<int> statuses) {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  impl_->status_script = std::move(statuses);
  impl_->script_pos = 0;
}

void MockEndpoint::set_raw_response(std::string body) {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  impl_->raw_response = std::move(body);
}

std::vector<nlohmann::json> MockEndpoint::requests() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return impl_->requests;
}

std::size_t MockEndpoint::request_count() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return impl_->requests.size();
}

std::vector<std::string> MockEndpoint::auth_headers() const {
  std::lock_guard<std::mutex> lock(impl_->mutex);
  return impl_->auth_headers;
}

}  // namespace testsupport
