#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mqa/transport.hpp"

namespace mqa {

struct MarkedImage;

// Bumped whenever either prompt template changes; part of every cache key.
inline constexpr std::string_view kTemplateVersion = "v1";

struct ChatPart {
  enum class Kind { text, image_png };
  Kind kind = Kind::text;
  std::string text;                // Kind::text
  std::vector<std::uint8_t> data;  // Kind::image_png, encoded bytes

  static ChatPart make_text(std::string t) { return {Kind::text, std::move(t), {}}; }
  static ChatPart make_png(std::vector<std::uint8_t> png) { return {Kind::image_png, {}, std::move(png)}; }
};

struct ChatMessage {
  std::string role;
  std::vector<ChatPart> parts;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 64;
};

// OpenAI-compatible chat-completions body; images become base64 data URLs.
nlohmann::ordered_json to_wire(const ChatRequest& request);

// All text parts, role-prefixed, newline-joined. Images are not part of it.
std::string prompt_text(const ChatRequest& request);
std::string prompt_text_from_wire(const nlohmann::json& wire);
std::string prompt_hash(const ChatRequest& request);
std::string prompt_hash_from_wire(const nlohmann::json& wire);

ChatRequest build_tase_prompt(std::string_view expression, const std::string& model_id = {});
ChatRequest build_moos_prompt(std::string_view expression, const MarkedImage& marked, int mark_count,
                              const std::string& model_id = {});

struct SubjectSet {
  std::vector<std::string> subjects;
  std::string raw_reply;
};

class EmptySubjectsError : public std::runtime_error {
 public:
  EmptySubjectsError() : std::runtime_error("no subject phrase in reply") {}
};

// Separator " ." (plus an optional terminal period and line breaks).
SubjectSet parse_subjects(std::string_view raw_reply);

enum class ParseStatus { ok, out_of_range, unparseable, refused };
std::string_view to_string(ParseStatus status) noexcept;
std::optional<ParseStatus> parse_parse_status(std::string_view text);

struct SelectionReply {
  std::optional<std::int64_t> chosen_mark;
  std::string raw_reply;
  ParseStatus parse_status = ParseStatus::unparseable;
};

const std::vector<std::string>& default_refusal_patterns();

// Refusal patterns are matched first (case-insensitive substring); otherwise the
// first run of ASCII digits decides. Total over all inputs.
SelectionReply parse_selection(std::string_view raw_reply, int mark_count,
                               const std::vector<std::string>& refusal_patterns = default_refusal_patterns());

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual HttpReply post(const std::string& wire_body) = 0;
  virtual std::string id() const = 0;
};

class HttpChatTransport : public ChatTransport {
 public:
  HttpChatTransport(std::string endpoint, std::string bearer_token,
                    std::chrono::seconds timeout = std::chrono::seconds(60));
  HttpReply post(const std::string& wire_body) override;
  std::string id() const override { return endpoint_; }

 private:
  std::string endpoint_;
  std::string token_;
  std::chrono::seconds timeout_;
};

// Replies from a fixture map keyed by prompt_hash. Unknown prompts get a 404.
class MockChatTransport : public ChatTransport {
 public:
  MockChatTransport() = default;
  explicit MockChatTransport(std::unordered_map<std::string, std::string> replies);
  // JSON object {"<prompt hash>": "<reply text>", ...}.
  static std::shared_ptr<MockChatTransport> from_file(const std::string& path);

  void script(const ChatRequest& request, std::string reply);
  void script_hash(std::string hash, std::string reply);
  // Statuses returned, in order, before fixture replies are served.
  void fail_next(std::vector<int> statuses);

  HttpReply post(const std::string& wire_body) override;
  std::string id() const override { return "mock"; }

  int calls() const noexcept { return calls_.load(); }
  void reset_calls() noexcept { calls_ = 0; }

 private:
  std::unordered_map<std::string, std::string> replies_;
  std::vector<int> failures_;
  std::size_t failure_pos_ = 0;
  std::atomic<int> calls_{0};
  std::mutex mu_;
};

struct ChatResult {
  std::string text;
  int retries = 0;
};

// Extracts choices[0].message.content from a chat-completions response.
std::string parse_chat_response(const std::string& body);

ChatResult chat_complete(const ChatRequest& request, ChatTransport& transport, const RetryPolicy& policy,
                         RateLimiter* limiter = nullptr);

}  // namespace mqa
