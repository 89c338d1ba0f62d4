#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "citypipe/corpus.hpp"

namespace testsupport {

std::filesystem::path test_dir();       // source tree tests/ directory
std::filesystem::path fixture_annotations();

// Fresh scratch directory under the build tree.
std::filesystem::path make_temp_dir(const std::string& tag);

// Deterministic 64x48 BGR pattern keyed by the image's relative path.
void write_synthetic_frame(const std::filesystem::path& path, const std::string& key);

// Writes every frame referenced by the annotation document under root.
void materialize_frames(const citypipe::Corpus& corpus, const std::filesystem::path& frames_root);

// Canned deterministic captions the scripted endpoint replies with.
extern const char* kMockPedestrianCaption;
extern const char* kMockVehicleCaption;

// Answer for the last user question in an OpenAI-style request body.
std::string default_mock_answer(const nlohmann::json& body);

// Extracts the text of a message entry (string or multi-part content).
std::string message_text(const nlohmann::json& message);

// In-process chat-completions endpoint. Records every request body; an
// optional status script forces per-request HTTP statuses (0 entries left
// means 200 + answer).
class MockEndpoint {
 public:
  using AnswerFn = std::function<std::string(const nlohmann::json& body)>;

  explicit MockEndpoint(AnswerFn answer = default_mock_answer);
  ~MockEndpoint();

  MockEndpoint(const MockEndpoint&) = delete;
  MockEndpoint& operator=(const MockEndpoint&) = delete;

  std::string url() const;
  void set_status_script(std::vector<int> statuses);
  // When set, every 200 reply uses these bytes verbatim instead of a
  // well-formed chat-completions document.
  void set_raw_response(std::string body);
  std::vector<nlohmann::json> requests() const;
  std::size_t request_count() const;
  // Authorization header of each request ("" when absent).
  std::vector<std::string> auth_headers() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace testsupport
