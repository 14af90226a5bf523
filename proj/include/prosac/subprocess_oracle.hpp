#pragma once

// Risk oracle backed by an external runner process speaking
// line-delimited JSON ("prosac-oracle/1") over its stdin/stdout.
//
//   child -> parent (first line) {"protocol":"prosac-oracle/1","n":N,"metadata":{...}}
//   parent -> child              {"id":I,"lambda":[...],"seed":S,"per_sample":B}
//   child -> parent              {"id":I,"risk":R,"n":N[,"correct":[...],"fooled":[...]]}
//                                {"id":I,"error":"..."}
//   shutdown: parent closes the child's stdin; child exits 0.
//
// The runner must hold its calibration set fixed for its whole lifetime; the
// parent cannot check this.

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "prosac/oracle.hpp"

extern char** environ;

namespace prosac {

inline constexpr std::string_view kProtocolName = "prosac-oracle/1";
inline constexpr std::chrono::milliseconds kDefaultRunnerTimeout{300'000};

class ProtocolError : public OracleError {
 public:
  using OracleError::OracleError;
};

class NDriftError : public OracleError {
 public:
  using OracleError::OracleError;
};

class RunnerTimeout : public OracleError {
 public:
  using OracleError::OracleError;
};

class RunnerExited : public OracleError {
 public:
  using OracleError::OracleError;
};

class RunnerReportedError : public OracleError {
 public:
  using OracleError::OracleError;
};

/// PROSAC_RUNNER_TIMEOUT_SECS if set and valid, else `fallback`.
inline std::chrono::milliseconds runner_timeout_from_env(
    std::chrono::milliseconds fallback = kDefaultRunnerTimeout) {
  const char* raw = std::getenv("PROSAC_RUNNER_TIMEOUT_SECS");
  if (!raw || !*raw) return fallback;
  double secs = 0.0;
  if (!detail::parse_double(raw, secs) || !(secs > 0.0)) return fallback;
  return std::chrono::milliseconds(static_cast<long long>(secs * 1000.0));
}

class SubprocessOracle final : public RiskOracle {
 public:
  SubprocessOracle(std::vector<std::string> argv,
                   std::chrono::milliseconds timeout = kDefaultRunnerTimeout)
      : argv_(std::move(argv)), timeout_(timeout) {
    if (argv_.empty()) throw std::invalid_argument("SubprocessOracle: empty command line");
    spawn();
    try {
      handshake();
    } catch (...) {
      shutdown();
      throw;
    }
  }

  SubprocessOracle(const SubprocessOracle&) = delete;
  SubprocessOracle& operator=(const SubprocessOracle&) = delete;

  ~SubprocessOracle() override { shutdown(); }

  [[nodiscard]] const OracleDescriptor& descriptor() const override { return desc_; }
  [[nodiscard]] pid_t pid() const noexcept { return pid_; }

  RiskEstimate evaluate(std::span<const double> lambda, Seed seed, bool per_sample = false) override {
    return roundtrip(lambda, seed, per_sample);
  }

  /// One request/response exchange. Only one request is in flight per child.
  RiskEstimate roundtrip(std::span<const double> lambda, Seed seed, bool per_sample) {
    std::lock_guard lock(mutex_);
    if (dead_) throw RunnerExited("runner '" + argv_.front() + "' is no longer running");
    const std::int64_t id = next_id_++;
    json request = {{"id", id},
                    {"lambda", std::vector<double>(lambda.begin(), lambda.end())},
                    {"seed", seed},
                    {"per_sample", per_sample}};
    write_line(request.dump());
    const std::string line = read_line();
    json response;
    try {
      response = json::parse(line);
    } catch (const json::parse_error&) {
      throw ProtocolError("runner response is not JSON: '" + line + "'");
    }
    if (!response.is_object()) throw ProtocolError("runner response is not an object: '" + line + "'");
    if (!response.contains("id") || !response["id"].is_number_integer() ||
        response["id"].get<std::int64_t>() != id) {
      throw ProtocolError("runner response id does not match request " + std::to_string(id) +
                          ": '" + line + "'");
    }
    if (response.contains("error")) {
      throw RunnerReportedError("runner error for lambda " + format_point(lambda) + ": " +
                                response["error"].dump());
    }
    if (!response.contains("risk") || !response["risk"].is_number() || !response.contains("n") ||
        !response["n"].is_number_integer()) {
      throw ProtocolError("runner response lacks numeric 'risk' and integer 'n': '" + line + "'");
    }
    const auto n = response["n"].get<std::int64_t>();
    if (n != desc_.n) {
      throw NDriftError("runner reported n=" + std::to_string(n) + " but the handshake declared n=" +
                        std::to_string(desc_.n));
    }
    const double risk = response["risk"].get<double>();
    if (!(risk >= 0.0 && risk <= 1.0)) {
      throw ProtocolError("runner risk " + std::to_string(risk) + " outside [0,1]");
    }
    if (seed != kAverageSeed && !on_risk_lattice(risk, n)) {
      throw ProtocolError("runner risk " + std::to_string(risk) + " is not a multiple of 1/" +
                          std::to_string(n));
    }
    RiskEstimate out{risk, n, Point(lambda.begin(), lambda.end()), std::nullopt};
    if (per_sample) out.per_sample = decode_samples(response, n, risk);
    return out;
  }

  [[nodiscard]] json fingerprint_source() const override {
    return {{"kind", "subprocess"}, {"command", argv_}, {"n", desc_.n},
            {"metadata", desc_.attack_metadata}};
  }

  /// Closes the child's stdin and reaps it; returns its exit status if known.
  std::optional<int> shutdown() {
    std::lock_guard lock(mutex_);
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_WR);
    }
    std::optional<int> status;
    if (pid_ > 0) {
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
      int raw = 0;
      while (true) {
        const pid_t r = ::waitpid(pid_, &raw, WNOHANG);
        if (r == pid_) {
          if (WIFEXITED(raw)) status = WEXITSTATUS(raw);
          break;
        }
        if (r < 0 || std::chrono::steady_clock::now() > deadline) {
          ::kill(pid_, SIGKILL);
          ::waitpid(pid_, &raw, 0);
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      pid_ = -1;
    }
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    dead_ = true;
    return status;
  }

 private:
  void spawn() {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
      throw OracleError(std::string("socketpair failed: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);

    std::vector<char*> args;
    for (auto& a : argv_) args.push_back(a.data());
    args.push_back(nullptr);
    const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    if (rc != 0) {
      ::close(fds[0]);
      pid_ = -1;
      throw RunnerExited("cannot start runner '" + argv_.front() + "': " + std::strerror(rc));
    }
    fd_ = fds[0];
  }

  void handshake() {
    const std::string line = read_line();
    json hello;
    try {
      hello = json::parse(line);
    } catch (const json::parse_error&) {
      throw ProtocolError("runner handshake is not JSON: '" + line + "'");
    }
    if (!hello.is_object() || hello.value("protocol", std::string{}) != kProtocolName) {
      throw ProtocolError("runner handshake does not declare protocol " + std::string(kProtocolName) +
                          ": '" + line + "'");
    }
    if (!hello.contains("n") || !hello["n"].is_number_integer() || hello["n"].get<std::int64_t>() < 1) {
      throw ProtocolError("runner handshake lacks a positive integer 'n': '" + line + "'");
    }
    desc_.kind = OracleKind::subprocess;
    desc_.n = hello["n"].get<std::int64_t>();
    desc_.attack_metadata = hello.value("metadata", json::object());
    desc_.concurrency_safe = false;
  }

  std::vector<SampleOutcome> decode_samples(const json& response, std::int64_t n, double risk) {
    if (!response.contains("correct") || !response.contains("fooled") ||
        !response["correct"].is_array() || !response["fooled"].is_array()) {
      throw ProtocolError("per-sample response lacks 'correct'/'fooled' arrays");
    }
    const auto& correct = response["correct"];
    const auto& fooled = response["fooled"];
    if (correct.size() != static_cast<std::size_t>(n) || fooled.size() != static_cast<std::size_t>(n)) {
      throw ProtocolError("per-sample arrays must have length n=" + std::to_string(n));
    }
    std::vector<SampleOutcome> samples;
    samples.reserve(correct.size());
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < correct.size(); ++i) {
      const auto c = correct[i].get<int>();
      const auto f = fooled[i].get<int>();
      if ((c != 0 && c != 1) || (f != 0 && f != 1)) {
        throw ProtocolError("per-sample indicators must be 0 or 1 (index " + std::to_string(i) + ")");
      }
      hits += c * f;
      samples.push_back({c == 1, f == 1});
    }
    if (hits != lattice_ceil(risk, n)) {
      throw ProtocolError("scalar risk " + std::to_string(risk) +
                          " disagrees with per-sample count " + std::to_string(hits));
    }
    return samples;
  }

  void write_line(const std::string& payload) {
    std::string data = payload + '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t w = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (w < 0) {
        if (errno == EINTR) continue;
        mark_dead();
        throw RunnerExited("runner '" + argv_.front() + "' closed its input: " + std::strerror(errno) +
                           exit_description());
      }
      off += static_cast<std::size_t>(w);
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (true) {
      if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (remaining.count() <= 0) {
        mark_dead();
        ::kill(pid_, SIGKILL);
        throw RunnerTimeout("runner '" + argv_.front() + "' did not answer within " +
                            std::to_string(timeout_.count()) + " ms");
      }
      pollfd pfd{fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(remaining.count(), 1'000'000)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw OracleError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[4096];
      const ssize_t got = ::recv(fd_, chunk, sizeof chunk, 0);
      if (got < 0) {
        if (errno == EINTR) continue;
        mark_dead();
        throw RunnerExited("reading from runner failed: " + std::string(std::strerror(errno)));
      }
      if (got == 0) {
        mark_dead();
        throw RunnerExited("runner '" + argv_.front() + "' closed its output" + exit_description());
      }
      buffer_.append(chunk, static_cast<std::size_t>(got));
    }
  }

  void mark_dead() { dead_ = true; }

  std::string exit_description() {
    if (pid_ <= 0) return {};
    int raw = 0;
    for (int i = 0; i < 200; ++i) {
      const pid_t r = ::waitpid(pid_, &raw, WNOHANG);
      if (r == pid_) {
        pid_ = -1;
        if (WIFEXITED(raw)) return " (exit status " + std::to_string(WEXITSTATUS(raw)) + ")";
        if (WIFSIGNALED(raw)) return " (killed by signal " + std::to_string(WTERMSIG(raw)) + ")";
        return {};
      }
      if (r < 0) return {};
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return {};
  }

  std::vector<std::string> argv_;
  std::chrono::milliseconds timeout_;
  OracleDescriptor desc_;
  pid_t pid_ = -1;
  int fd_ = -1;
  std::string buffer_;
  std::int64_t next_id_ = 1;
  bool dead_ = false;
  std::mutex mutex_;
};

}  // namespace prosac
