// Shared helpers for the test suites: temp directories, corpus builders and
// a local chat-completions stub server.
#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "subsel/corpus.hpp"

namespace testsup {

class TempDir {
 public:
  TempDir() {
    static std::atomic<unsigned> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("subsel_test_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path file(const std::string& name) const {
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline subsel::Sample make_sample(std::int64_t id, std::string instruction,
                                  std::string answer,
                                  std::string input = "") {
  subsel::Sample s;
  s.id = id;
  s.instruction = std::move(instruction);
  s.answer = std::move(answer);
  if (!input.empty()) s.input = std::move(input);
  return s;
}

/// A corpus whose sample texts are fully controlled: texts[i] becomes the
/// instruction of sample i, answers stay empty-ish ("-" keeps answer short
/// and constant so instruction_and_answer policies stay predictable).
inline subsel::Dataset corpus_from_texts(const std::vector<std::string>& texts,
                                         std::string answer = "-") {
  std::vector<subsel::Sample> samples;
  for (std::size_t i = 0; i < texts.size(); ++i)
    samples.push_back(
        make_sample(static_cast<std::int64_t>(i), texts[i], answer));
  return subsel::Dataset::from_samples(std::move(samples));
}

/// Synthetic corpus with one globally unique token per sample, so any
/// candidate always adds vocabulary. Handy for exercising the loop shape
/// rather than the oracle's preferences.
inline subsel::Dataset distinct_corpus(std::size_t n) {
  std::vector<std::string> texts;
  texts.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    texts.push_back("explain concept token" + std::to_string(i));
  return corpus_from_texts(texts);
}

/// Local OpenAI-compatible stub. Replies to every POST with a fixed list of
/// response contents cycled in request order and records each request body.
class StubChatServer {
 public:
  explicit StubChatServer(std::vector<std::string> replies)
      : replies_(std::move(replies)) {
    server_.Post("/v1/chat/completions",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   std::lock_guard lock(mutex_);
                   bodies_.push_back(req.body);
                   auth_headers_.push_back(req.get_header_value("Authorization"));
                   const std::string& content =
                       replies_[std::min(served_, replies_.size() - 1)];
                   ++served_;
                   nlohmann::json reply = {
                       {"choices",
                        {{{"message",
                           {{"role", "assistant"}, {"content", content}}}}}}};
                   res.set_content(reply.dump(), "application/json");
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubChatServer() {
    server_.stop();
    thread_.join();
  }

  int port() const { return port_; }
  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_) +
           "/v1/chat/completions";
  }
  std::vector<std::string> bodies() {
    std::lock_guard lock(mutex_);
    return bodies_;
  }
  std::vector<std::string> auth_headers() {
    std::lock_guard lock(mutex_);
    return auth_headers_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  std::vector<std::string> replies_;
  std::vector<std::string> bodies_;
  std::vector<std::string> auth_headers_;
  std::size_t served_ = 0;
  int port_ = 0;
  std::mutex mutex_;
};

}  // namespace testsup
