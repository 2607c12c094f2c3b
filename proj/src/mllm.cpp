#include "mqa/mllm.hpp"

#include <algorithm>
#include <cctype>
#include <limits>

#include "mqa/error.hpp"
#include "mqa/hash.hpp"
#include "mqa/marker.hpp"

namespace mqa {

namespace {

// Template v1. Changing either text requires bumping kTemplateVersion.
constexpr std::string_view kTaseTemplate =
    "You help an open-vocabulary object detector locate the object a user query describes.\n"
    "Query: \"{expression}\"\n"
    "Identify the target subject(s) of the query: the object nouns together with the attributes that "
    "describe them. Leave out objects that only serve as reference points for location.\n"
    "Answer on one line. End each subject phrase with \" .\" and separate phrases with a space, "
    "for example: plant .";

constexpr std::string_view kMoosTemplate =
    "The image shows candidate objects. Each one is outlined by a box with a numeric mark at the box center.\n"
    "Query: \"{expression}\"\n"
    "Which marked object does the query refer to? Valid answers: {choices}.\n"
    "Reply with exactly one of the valid answers and nothing else.";

std::string substitute(std::string_view tmpl, std::string_view key, std::string_view value) {
  std::string out(tmpl);
  const auto pos = out.find(key);
  if (pos != std::string::npos) out.replace(pos, key.size(), value);
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Pieces made only of punctuation (" . ." debris) are not subjects.
bool has_word_char(std::string_view s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c >= 0x80; });
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

nlohmann::ordered_json to_wire(const ChatRequest& request) {
  nlohmann::ordered_json j;
  j["model"] = request.model_id;
  auto messages = nlohmann::ordered_json::array();
  for (const auto& m : request.messages) {
    nlohmann::ordered_json msg;
    msg["role"] = m.role;
    auto content = nlohmann::ordered_json::array();
    for (const auto& p : m.parts) {
      nlohmann::ordered_json part;
      if (p.kind == ChatPart::Kind::text) {
        part["type"] = "text";
        part["text"] = p.text;
      } else {
        part["type"] = "image_url";
        part["image_url"] = {{"url", "data:image/png;base64," + base64_encode(p.data)}};
      }
      content.push_back(std::move(part));
    }
    msg["content"] = std::move(content);
    messages.push_back(std::move(msg));
  }
  j["messages"] = std::move(messages);
  j["temperature"] = request.temperature;
  j["max_tokens"] = request.max_tokens;
  return j;
}

std::string prompt_text(const ChatRequest& request) {
  std::string out;
  for (const auto& m : request.messages)
    for (const auto& p : m.parts)
      if (p.kind == ChatPart::Kind::text) out += m.role + ": " + p.text + "\n";
  return out;
}

std::string prompt_text_from_wire(const nlohmann::json& wire) {
  std::string out;
  if (!wire.contains("messages") || !wire["messages"].is_array()) throw ParseError("wire request has no messages");
  for (const auto& m : wire["messages"]) {
    const std::string role = m.value("role", "");
    const auto& content = m.at("content");
    if (content.is_string()) {
      out += role + ": " + content.get<std::string>() + "\n";
      continue;
    }
    for (const auto& p : content)
      if (p.value("type", "") == "text") out += role + ": " + p.at("text").get<std::string>() + "\n";
  }
  return out;
}

std::string prompt_hash(const ChatRequest& request) { return sha256_hex(prompt_text(request)); }
std::string prompt_hash_from_wire(const nlohmann::json& wire) { return sha256_hex(prompt_text_from_wire(wire)); }

ChatRequest build_tase_prompt(std::string_view expression, const std::string& model_id) {
  if (trim(expression).empty()) throw ValidationError("TASE prompt: empty expression");
  ChatRequest req;
  req.model_id = model_id;
  req.messages.push_back({"user", {ChatPart::make_text(substitute(kTaseTemplate, "{expression}", expression))}});
  return req;
}

ChatRequest build_moos_prompt(std::string_view expression, const MarkedImage& marked, int mark_count,
                              const std::string& model_id) {
  if (mark_count < 1) throw ValidationError("MOOS prompt: mark_count must be >= 1");
  if (trim(expression).empty()) throw ValidationError("MOOS prompt: empty expression");
  if (marked.png.empty()) throw ValidationError("MOOS prompt: marked image not encoded");
  std::string choices;
  for (int k = 1; k <= mark_count; ++k) {
    if (k > 1) choices += ", ";
    choices += "[" + std::to_string(k) + "]";
  }
  std::string text = substitute(kMoosTemplate, "{expression}", expression);
  text = substitute(text, "{choices}", choices);
  ChatRequest req;
  req.model_id = model_id;
  req.messages.push_back({"user", {ChatPart::make_text(std::move(text)), ChatPart::make_png(marked.png)}});
  return req;
}

SubjectSet parse_subjects(std::string_view raw_reply) {
  SubjectSet out;
  out.raw_reply = std::string(raw_reply);
  std::size_t pos = 0;
  while (pos <= raw_reply.size()) {
    auto nl = raw_reply.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw_reply.size();
    std::string_view line = trim(raw_reply.substr(pos, nl - pos));
    pos = nl + 1;
    if (!line.empty() && line.back() == '.') line.remove_suffix(1);
    std::size_t at = 0;
    for (;;) {
      const auto sep = line.find(" .", at);
      const auto piece = trim(line.substr(at, sep == std::string_view::npos ? std::string_view::npos : sep - at));
      if (has_word_char(piece)) out.subjects.emplace_back(piece);
      if (sep == std::string_view::npos) break;
      at = sep + 2;
    }
  }
  if (out.subjects.empty()) throw EmptySubjectsError();
  return out;
}

std::string_view to_string(ParseStatus status) noexcept {
  switch (status) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::out_of_range: return "out_of_range";
    case ParseStatus::unparseable: return "unparseable";
    case ParseStatus::refused: return "refused";
  }
  return "unparseable";
}

std::optional<ParseStatus> parse_parse_status(std::string_view text) {
  for (auto s : {ParseStatus::ok, ParseStatus::out_of_range, ParseStatus::unparseable, ParseStatus::refused})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

const std::vector<std::string>& default_refusal_patterns() {
  static const std::vector<std::string> patterns{
      "cannot", "can't", "can not", "unable to", "not able to", "not possible to determine", "sorry", "i'm not sure",
  };
  return patterns;
}

SelectionReply parse_selection(std::string_view raw_reply, int mark_count, const std::vector<std::string>& refusal_patterns) {
  if (mark_count < 1) throw ValidationError("parse_selection: mark_count must be >= 1");
  SelectionReply out;
  out.raw_reply = std::string(raw_reply);

  const std::string low = lower(raw_reply);
  for (const auto& p : refusal_patterns) {
    if (!p.empty() && low.find(lower(p)) != std::string::npos) {
      out.parse_status = ParseStatus::refused;
      return out;
    }
  }

  const auto begin = raw_reply.find_first_of("0123456789");
  if (begin == std::string_view::npos) {
    out.parse_status = ParseStatus::unparseable;
    return out;
  }
  std::int64_t value = 0;
  constexpr std::int64_t cap = std::numeric_limits<std::int64_t>::max() / 10 - 10;
  for (auto i = begin; i < raw_reply.size() && std::isdigit(static_cast<unsigned char>(raw_reply[i])); ++i) {
    value = value * 10 + (raw_reply[i] - '0');
    if (value > cap) value = cap;  // saturate; anything this large is out of range anyway
  }
  out.chosen_mark = value;
  out.parse_status = (value >= 1 && value <= mark_count) ? ParseStatus::ok : ParseStatus::out_of_range;
  return out;
}

HttpChatTransport::HttpChatTransport(std::string endpoint, std::string bearer_token, std::chrono::seconds timeout)
    : endpoint_(std::move(endpoint)), token_(std::move(bearer_token)), timeout_(timeout) {}

HttpReply HttpChatTransport::post(const std::string& wire_body) {
  std::map<std::string, std::string> headers;
  if (!token_.empty()) headers["Authorization"] = "Bearer " + token_;
  return http_post_json(endpoint_, wire_body, headers, timeout_);
}

MockChatTransport::MockChatTransport(std::unordered_map<std::string, std::string> replies) : replies_(std::move(replies)) {}

std::shared_ptr<MockChatTransport> MockChatTransport::from_file(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("mock MLLM fixture " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("mock MLLM fixture " + path + " must be a JSON object");
  auto mock = std::make_shared<MockChatTransport>();
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ConfigError("mock MLLM fixture " + path + ": reply for " + k + " is not a string");
    mock->replies_[k] = v.get<std::string>();
  }
  return mock;
}

void MockChatTransport::script(const ChatRequest& request, std::string reply) {
  script_hash(prompt_hash(request), std::move(reply));
}

void MockChatTransport::script_hash(std::string hash, std::string reply) {
  std::lock_guard lock(mu_);
  replies_[std::move(hash)] = std::move(reply);
}

void MockChatTransport::fail_next(std::vector<int> statuses) {
  std::lock_guard lock(mu_);
  failures_ = std::move(statuses);
  failure_pos_ = 0;
}

HttpReply MockChatTransport::post(const std::string& wire_body) {
  ++calls_;
  std::lock_guard lock(mu_);
  if (failure_pos_ < failures_.size()) {
    HttpReply r;
    r.status = failures_[failure_pos_++];
    r.error = "scripted failure";
    if (r.status != 0) r.body = R"({"error":{"message":"scripted failure"}})";
    return r;
  }
  std::string hash;
  try {
    hash = prompt_hash_from_wire(nlohmann::json::parse(wire_body));
  } catch (const std::exception& e) {
    return {400, std::string(R"({"error":{"message":"bad request"}})"), e.what()};
  }
  auto it = replies_.find(hash);
  if (it == replies_.end()) return {404, R"({"error":{"message":"no scripted reply for prompt )" + hash + "\"}}", {}};
  nlohmann::ordered_json resp;
  resp["id"] = "mock-" + hash.substr(0, 12);
  resp["object"] = "chat.completion";
  resp["choices"] = nlohmann::ordered_json::array(
      {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", it->second}}}, {"finish_reason", "stop"}}});
  return {200, resp.dump(), {}};
}

std::string parse_chat_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error&) {
    throw TransportError(TransportErrorKind::malformed, "chat response is not JSON");
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {
      std::string out;
      for (const auto& p : content)
        if (p.value("type", "") == "text") out += p.at("text").get<std::string>();
      return out;
    }
  } catch (const nlohmann::json::exception&) {
  }
  throw TransportError(TransportErrorKind::malformed, "chat response has no choices[0].message.content");
}

ChatResult chat_complete(const ChatRequest& request, ChatTransport& transport, const RetryPolicy& policy,
                         RateLimiter* limiter) {
  if (request.messages.empty()) throw ValidationError("chat request without messages");
  const std::string body = to_wire(request).dump();
  auto sent = send_with_retry(
      [&] {
        if (limiter) limiter->acquire();
        return transport.post(body);
      },
      policy, "chat " + transport.id());
  return {parse_chat_response(sent.reply.body), sent.retries};
}

}  // namespace mqa
