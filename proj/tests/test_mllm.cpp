#include <doctest.h>

#include <random>

#include "mqa/error.hpp"
#include "mqa/marker.hpp"
#include "mqa/mllm.hpp"

using namespace mqa;

namespace {

RetryPolicy fast_retry(int max_retries = 3) {
  RetryPolicy p;
  p.max_retries = max_retries;
  p.base_delay = std::chrono::milliseconds(0);
  p.max_delay = std::chrono::milliseconds(0);
  return p;
}

MarkedImage tiny_marked() {
  Image img(32, 32, {200, 200, 200});
  DetectionSet d = assign_marks({Candidate{Box{2, 2, 12, 12}, 0.9, "a", 1}, Candidate{Box{16, 16, 30, 30}, 0.5, "a", 1}});
  return render(img, d);
}

}  // namespace

TEST_CASE("TASE prompt embeds the expression verbatim") {
  const std::string expr = "the tall green plant in the basket is standing near the woman in black top";
  const auto req = build_tase_prompt(expr, "gpt-4o");
  REQUIRE(req.messages.size() == 1);
  CHECK(req.messages[0].role == "user");
  REQUIRE(req.messages[0].parts.size() == 1);
  CHECK(req.messages[0].parts[0].kind == ChatPart::Kind::text);
  CHECK(req.messages[0].parts[0].text.find(expr) != std::string::npos);
  CHECK(req.temperature == 0.0);
  CHECK(to_wire(req).dump() == to_wire(build_tase_prompt(expr, "gpt-4o")).dump());
  CHECK_THROWS_AS(build_tase_prompt("", "m"), ValidationError);
  CHECK_THROWS_AS(build_tase_prompt("   ", "m"), ValidationError);
}

TEST_CASE("TASE round trip through a scripted mock") {
  MockChatTransport mock;
  const auto req = build_tase_prompt("two dogs", "m");
  mock.script(req, "dogs .");
  const auto reply = chat_complete(req, mock, fast_retry());
  const auto subjects = parse_subjects(reply.text);
  CHECK(subjects.subjects == std::vector<std::string>{"dogs"});
  CHECK(mock.calls() == 1);
}

TEST_CASE("parse_subjects") {
  CHECK(parse_subjects("plant .").subjects == std::vector<std::string>{"plant"});
  CHECK(parse_subjects("teddy bear . checkered design .").subjects ==
        std::vector<std::string>{"teddy bear", "checkered design"});
  CHECK(parse_subjects("plant.").subjects == std::vector<std::string>{"plant"});
  CHECK(parse_subjects("Woman In Black Top .").subjects == std::vector<std::string>{"Woman In Black Top"});
  CHECK(parse_subjects("dog .\ncat .").subjects == std::vector<std::string>{"dog", "cat"});
  CHECK(parse_subjects("plant .").raw_reply == "plant .");
  CHECK_THROWS_AS(parse_subjects("   "), EmptySubjectsError);
  CHECK_THROWS_AS(parse_subjects(" . . ."), EmptySubjectsError);
}

TEST_CASE("parse_subjects recovers a single separator-free phrase") {
  std::mt19937_64 rng(5);
  const std::string alphabet = "abcxyz .,'-0123456789";
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    std::string s;
    const auto len = 1 + rng() % 20;
    for (std::size_t k = 0; k < len; ++k) s += alphabet[rng() % alphabet.size()];
    // trimmed, contains a word character, free of the separator
    const auto b = s.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    s = s.substr(b, s.find_last_not_of(' ') - b + 1);
    if (s.find(" .") != std::string::npos) continue;
    if (s.find_first_of("abcxyz0123456789") == std::string::npos) continue;
    ++checked;
    const auto parsed = parse_subjects(s + " .");
    REQUIRE(parsed.subjects.size() == 1);
    CHECK(parsed.subjects[0] == s);
    for (const auto& p : parsed.subjects) CHECK(p.find(" .") == std::string::npos);
  }
  CHECK(checked > 500);
}

TEST_CASE("MOOS prompt enumerates the valid answers") {
  const auto marked = tiny_marked();
  const std::string expr = "the tall green plant in the basket";
  const auto req = build_moos_prompt(expr, marked, 2, "gpt-4o");
  const auto text = prompt_text(req);
  CHECK(text.find("[1]") != std::string::npos);
  CHECK(text.find("[2]") != std::string::npos);
  CHECK(text.find("[3]") == std::string::npos);
  CHECK(text.find(expr) != std::string::npos);
  int images = 0;
  for (const auto& m : req.messages)
    for (const auto& p : m.parts) images += p.kind == ChatPart::Kind::image_png;
  CHECK(images == 1);

  const auto wire = to_wire(req);
  const auto& content = wire["messages"][0]["content"];
  bool found_url = false;
  for (const auto& part : content)
    if (part["type"] == "image_url")
      found_url = part["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0) == 0;
  CHECK(found_url);
  CHECK(wire["temperature"] == 0.0);
  CHECK(to_wire(build_moos_prompt(expr, marked, 2, "gpt-4o")).dump() == wire.dump());
  CHECK(prompt_hash_from_wire(nlohmann::json::parse(wire.dump())) == prompt_hash(req));

  CHECK_NOTHROW(build_moos_prompt(expr, marked, 1, "m"));
  CHECK_THROWS_AS(build_moos_prompt(expr, marked, 0, "m"), ValidationError);
}

TEST_CASE("parse_selection") {
  auto r = parse_selection("[1]", 2);
  CHECK(r.parse_status == ParseStatus::ok);
  CHECK(r.chosen_mark == 1);

  r = parse_selection("The answer is 3.", 2);
  CHECK(r.parse_status == ParseStatus::out_of_range);
  CHECK(r.chosen_mark == 3);

  r = parse_selection("none of these match", 2);
  CHECK(r.parse_status == ParseStatus::unparseable);
  CHECK_FALSE(r.chosen_mark);

  r = parse_selection("I cannot determine which object is meant.", 2);
  CHECK(r.parse_status == ParseStatus::refused);
  CHECK_FALSE(r.chosen_mark);

  r = parse_selection("Sorry, I'm unable to tell between 1 and 2", 2);
  CHECK(r.parse_status == ParseStatus::refused);

  r = parse_selection("{\"final_target\": \"[2]\"}", 2);
  CHECK(r.parse_status == ParseStatus::ok);
  CHECK(r.chosen_mark == 2);

  r = parse_selection("[0]", 3);
  CHECK(r.parse_status == ParseStatus::out_of_range);
  CHECK(r.chosen_mark == 0);

  r = parse_selection("99999999999999999999999", 3);
  CHECK(r.parse_status == ParseStatus::out_of_range);

  r = parse_selection("it is NOT POSSIBLE TO DETERMINE", 3, {"not possible to determine"});
  CHECK(r.parse_status == ParseStatus::refused);
  CHECK(parse_selection("I cannot", 3, {}).parse_status == ParseStatus::unparseable);
  CHECK_THROWS_AS(parse_selection("[1]", 0), ValidationError);
}

TEST_CASE("parse_selection is total and picks the first integer") {
  std::mt19937_64 rng(9);
  const std::string alphabet = "[]0123456789 abc.-x";
  for (int i = 0; i < 3000; ++i) {
    std::string s;
    const auto len = rng() % 12;
    for (std::size_t k = 0; k < len; ++k) s += alphabet[rng() % alphabet.size()];
    const int k = 1 + static_cast<int>(rng() % 5);
    const auto r = parse_selection(s, k, {});
    const bool has = r.chosen_mark.has_value();
    CHECK(has == (r.parse_status == ParseStatus::ok || r.parse_status == ParseStatus::out_of_range));
    const auto d = s.find_first_of("0123456789");
    CHECK(has == (d != std::string::npos));
    if (has) {
      auto e = s.find_first_not_of("0123456789", d);
      const std::string digits = s.substr(d, e == std::string::npos ? std::string::npos : e - d);
      if (digits.size() < 15) {
        CHECK(*r.chosen_mark == std::stoll(digits));
        CHECK((r.parse_status == ParseStatus::ok) == (*r.chosen_mark >= 1 && *r.chosen_mark <= k));
      }
    }
  }
}

TEST_CASE("chat_complete retries transient failures") {
  MockChatTransport mock;
  const auto req = build_tase_prompt("dog", "m");
  mock.script(req, "dog .");
  mock.fail_next({429, 429});
  const auto res = chat_complete(req, mock, fast_retry(3));
  CHECK(res.text == "dog .");
  CHECK(res.retries == 2);
  CHECK(mock.calls() == 3);
}

TEST_CASE("chat_complete gives up after max_retries") {
  MockChatTransport mock;
  const auto req = build_tase_prompt("dog", "m");
  mock.script(req, "dog .");
  mock.fail_next(std::vector<int>(10, 503));
  try {
    chat_complete(req, mock, fast_retry(3));
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.kind() == TransportErrorKind::server);
    CHECK(e.retries() == 3);
  }
  CHECK(mock.calls() == 4);

  MockChatTransport flaky;
  flaky.fail_next(std::vector<int>(10, 429));
  try {
    chat_complete(req, flaky, fast_retry(2));
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.kind() == TransportErrorKind::rate_limited);
  }

  MockChatTransport down;
  down.fail_next(std::vector<int>(10, 0));
  CHECK_THROWS_AS(chat_complete(req, down, fast_retry(1)), TransportError);
}

TEST_CASE("chat_complete does not retry auth errors") {
  MockChatTransport mock;
  const auto req = build_tase_prompt("dog", "m");
  mock.fail_next({401, 200});
  try {
    chat_complete(req, mock, fast_retry(3));
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.kind() == TransportErrorKind::auth);
  }
  CHECK(mock.calls() == 1);
}

TEST_CASE("unscripted prompts and malformed replies are terminal") {
  MockChatTransport mock;
  const auto req = build_tase_prompt("dog", "m");
  try {
    chat_complete(req, mock, fast_retry(3));
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(e.kind() == TransportErrorKind::rejected);
  }
  CHECK_THROWS_AS(parse_chat_response("{}"), TransportError);
  CHECK_THROWS_AS(parse_chat_response("not json"), TransportError);
  CHECK(parse_chat_response(R"({"choices":[{"message":{"role":"assistant","content":"[1]"}}]})") == "[1]");
  CHECK(parse_chat_response(
            R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})") == "ab");
}

TEST_CASE("rate limiter admits bursts up to capacity") {
  RateLimiter unlimited;
  for (int i = 0; i < 1000; ++i) unlimited.acquire();
  RateLimiter limiter(6000.0);  // 100/s, burst of 100
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 105; ++i) limiter.acquire();
  const auto elapsed = std::chrono::steady_clock::now() - t0;
  CHECK(elapsed >= std::chrono::milliseconds(30));
  CHECK(elapsed < std::chrono::seconds(2));
}
