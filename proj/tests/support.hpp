#pragma once

#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <thread>

#include "semfilter/embedding_store.hpp"
#include "semfilter/table.hpp"
#include "semfilter/util.hpp"

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("semfilter-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Local HTTP server on an ephemeral port. Register handlers on server()
/// before calling start().
class MockServer {
 public:
  MockServer() = default;
  ~MockServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Server& server() { return server_; }
  void start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

inline semfilter::Record make_record(semfilter::RecordId id,
                                     std::map<std::string, std::string> columns) {
  semfilter::Record r;
  r.id = id;
  r.columns = std::move(columns);
  return r;
}

}  // namespace testing
