#ifndef RELBOW_TESTS_HELPERS_HPP
#define RELBOW_TESTS_HELPERS_HPP

#include <atomic>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <mutex>
#include <string>
#include <vector>

#include "relbow/corpus.hpp"
#include "relbow/errors.hpp"
#include "relbow/relevance.hpp"
#include "relbow/rng.hpp"

namespace relbow::testing {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("relbow_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Chat client driven by a scripted transcript. An entry beginning with
// "ERROR" raises EndpointError; anything else is returned verbatim.
class ScriptedChatClient : public ChatClient {
 public:
  explicit ScriptedChatClient(std::vector<std::string> script)
      : script_(script.begin(), script.end()) {}

  std::string complete(const ChatRequest&) override {
    std::lock_guard lock(mutex_);
    ++calls_;
    if (script_.empty()) throw EndpointError("scripted client exhausted");
    std::string next = script_.front();
    script_.pop_front();
    if (next.rfind("ERROR", 0) == 0) throw EndpointError(next);
    return next;
  }

  int calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }

 private:
  std::deque<std::string> script_;
  int calls_ = 0;
  mutable std::mutex mutex_;
};

// Constant-response client that counts calls.
class ConstChatClient : public ChatClient {
 public:
  explicit ConstChatClient(std::string response) : response_(std::move(response)) {}
  std::string complete(const ChatRequest&) override {
    ++calls_;
    return response_;
  }
  int calls() const { return calls_.load(); }

 private:
  std::string response_;
  std::atomic<int> calls_{0};
};

inline Publication make_post(const std::string& user, const std::string& id,
                             std::int64_t ts, const std::string& text) {
  return Publication{user, id, ts, text};
}

inline Timeline make_timeline(const std::string& user, UserClass label,
                              std::vector<Publication> posts,
                              std::optional<Split> split = std::nullopt) {
  Timeline t;
  t.user_id = user;
  t.label = label;
  t.split = split;
  t.publications = std::move(posts);
  return t;
}

}  // namespace relbow::testing

#endif  // RELBOW_TESTS_HELPERS_HPP
