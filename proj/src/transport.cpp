#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "mqa/transport.hpp"

#include <algorithm>
#include <thread>

#include "mqa/error.hpp"

namespace mqa {

bool is_transient(const HttpReply& reply) noexcept {
  return reply.status == 0 || reply.status == 429 || (reply.status >= 500 && reply.status <= 599);
}

namespace {

TransportErrorKind classify(const HttpReply& reply) {
  if (reply.status == 0) return TransportErrorKind::network;
  if (reply.status == 401 || reply.status == 403) return TransportErrorKind::auth;
  if (reply.status == 429) return TransportErrorKind::rate_limited;
  if (reply.status >= 500) return TransportErrorKind::server;
  return TransportErrorKind::rejected;
}

std::string describe(const HttpReply& reply) {
  if (reply.status == 0) return reply.error.empty() ? "no response" : reply.error;
  std::string body = reply.body.substr(0, 200);
  return "HTTP " + std::to_string(reply.status) + (body.empty() ? "" : ": " + body);
}

}  // namespace

RetriedReply send_with_retry(const std::function<HttpReply()>& send, const RetryPolicy& policy,
                             const std::string& what) {
  int retries = 0;
  for (;;) {
    HttpReply reply = send();
    if (reply.status >= 200 && reply.status < 300) return {std::move(reply), retries};
    if (!is_transient(reply) || retries >= policy.max_retries)
      throw TransportError(classify(reply), what + ": " + describe(reply), retries);
    auto delay = policy.base_delay * (1LL << std::min(retries, 20));
    delay = std::min<std::chrono::milliseconds>(std::chrono::duration_cast<std::chrono::milliseconds>(delay),
                                                policy.max_delay);
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
    ++retries;
  }
}

RateLimiter::RateLimiter(double requests_per_minute)
    : rate_per_sec_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, requests_per_minute / 60.0)),
      tokens_(capacity_),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (rate_per_sec_ <= 0.0) return;
  for (;;) {
    std::chrono::duration<double> wait{};
    {
      std::lock_guard lock(mu_);
      const auto now = std::chrono::steady_clock::now();
      tokens_ = std::min(capacity_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_per_sec_);
      last_ = now;
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      wait = std::chrono::duration<double>((1.0 - tokens_) / rate_per_sec_);
    }
    std::this_thread::sleep_for(wait);
  }
}

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("URL without scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, "/"};
  return {url.substr(0, path), url.substr(path)};
}

namespace {

httplib::Headers to_headers(const std::map<std::string, std::string>& headers) {
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  return h;
}

HttpReply from_result(const httplib::Result& res) {
  HttpReply out;
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  return out;
}

}  // namespace

HttpReply http_post_json(const std::string& url, const std::string& body,
                         const std::map<std::string, std::string>& headers, std::chrono::seconds timeout) {
  const auto u = split_url(url);
  httplib::Client cli(u.scheme_host_port);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  return from_result(cli.Post(u.path, to_headers(headers), body, "application/json"));
}

HttpReply http_get(const std::string& url, const std::map<std::string, std::string>& headers,
                   std::chrono::seconds timeout) {
  const auto u = split_url(url);
  httplib::Client cli(u.scheme_host_port);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_follow_location(true);
  return from_result(cli.Get(u.path, to_headers(headers)));
}

}  // namespace mqa
