#pragma once

// Private helpers shared by the HTTP embedding and chat clients.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>

#include "semfilter/util.hpp"

namespace semfilter::detail {

struct Endpoint {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // "" or "/something", no trailing slash
};

inline Endpoint split_base_url(const std::string& base) {
  const auto scheme_end = base.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::kInvalidArgument, "base URL '" + base + "' has no scheme");
  }
  const auto path_start = base.find('/', scheme_end + 3);
  Endpoint ep;
  if (path_start == std::string::npos) {
    ep.origin = base;
  } else {
    ep.origin = base.substr(0, path_start);
    ep.path_prefix = base.substr(path_start);
    while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
  }
  return ep;
}

inline std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* value = std::getenv(name.c_str());
  return value == nullptr ? std::string{} : std::string(value);
}

inline bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

inline void backoff_sleep(std::chrono::milliseconds initial, std::chrono::milliseconds cap,
                          int attempt) {
  auto delay = initial * (1LL << std::min(attempt, 16));
  if (delay > cap) delay = cap;
  std::this_thread::sleep_for(delay);
}

}  // namespace semfilter::detail
