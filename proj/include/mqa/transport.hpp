#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <string>

namespace mqa {

// status == 0 means the request never produced an HTTP response.
struct HttpReply {
  int status = 0;
  std::string body;
  std::string error;
};

struct RetryPolicy {
  int max_retries = 4;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{16000};
};

// 429, 5xx and connection failures.
bool is_transient(const HttpReply& reply) noexcept;

struct RetriedReply {
  HttpReply reply;
  int retries = 0;
};

// Calls `send` until it returns a non-transient reply or the retry budget is
// spent, sleeping base * 2^attempt (capped) between attempts. Throws
// TransportError for anything other than a 2xx reply.
RetriedReply send_with_retry(const std::function<HttpReply()>& send, const RetryPolicy& policy,
                             const std::string& what);

// Process-wide token bucket. A rate of zero disables limiting.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_minute = 0.0);
  void acquire();

 private:
  double rate_per_sec_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mu_;
};

struct Url {
  std::string scheme_host_port;  // "https://api.example.com:443"
  std::string path;              // "/v1/chat/completions"
};

Url split_url(const std::string& url);

// Thin blocking HTTP helpers over cpp-httplib.
HttpReply http_post_json(const std::string& url, const std::string& body,
                         const std::map<std::string, std::string>& headers,
                         std::chrono::seconds timeout);
HttpReply http_get(const std::string& url, const std::map<std::string, std::string>& headers,
                   std::chrono::seconds timeout);

}  // namespace mqa
