#pragma once

// Oracle backed by a long-lived child process speaking newline-delimited JSON.
//
//   request  : {"request_id": <int>, "template": {...}, "instance_seed": <uint>}
//   response : {"request_id": <int>, "correct": <bool> | "metrics": {...},
//               "failure": "timeout" | "generation_failure" | "unparseable"}
//
// Responses may arrive in any order. A request with no response before its
// deadline becomes a timeout failure; a malformed response for a known id is a
// generation failure. Lines that cannot be attributed to a request are
// dropped.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/oracle.hpp"

namespace hardspot {

class ExternalProcessBackend final : public Backend {
 public:
  static constexpr double kDefaultTimeoutSeconds = 120.0;
  // Consecutive batches in which the process exited without answering
  // anything before the backend is declared unrecoverable.
  static constexpr int kMaxFruitlessRestarts = 3;

  ExternalProcessBackend(std::string command, const Space& space,
                         double timeout_seconds = kDefaultTimeoutSeconds)
      : command_(std::move(command)), space_(space), timeout_(timeout_seconds) {
    ::signal(SIGPIPE, SIG_IGN);
  }

  ExternalProcessBackend(const ExternalProcessBackend&) = delete;
  ExternalProcessBackend& operator=(const ExternalProcessBackend&) = delete;

  ~ExternalProcessBackend() override { stop(); }

  Outcome evaluate(const EvalRequest& request) override {
    return evaluate_batch(std::span(&request, 1), 1).front();
  }

  std::vector<Outcome> evaluate_batch(std::span<const EvalRequest> requests,
                                      std::size_t width) override {
    using Clock = std::chrono::steady_clock;
    ensure_running();
    width = std::max<std::size_t>(width, 1);

    std::vector<Outcome> out(requests.size(), Outcome::failed(Failure::timeout));
    struct Pending {
      std::size_t slot;
      Clock::time_point deadline;
    };
    std::unordered_map<std::uint64_t, Pending> in_flight;
    const auto timeout = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(timeout_));
    std::size_t next = 0;
    std::size_t answered = 0;
    bool died = false;

    while (next < requests.size() || !in_flight.empty()) {
      while (next < requests.size() && in_flight.size() < width && alive()) {
        const std::uint64_t rid = next_request_id_++;
        nlohmann::json req{{"request_id", rid},
                           {"template", space_.to_json(requests[next].id)},
                           {"instance_seed", requests[next].instance_seed}};
        if (!write_line(req.dump())) {
          out[next] = Outcome::failed(Failure::generation_failure);
        } else {
          in_flight.emplace(rid, Pending{next, Clock::now() + timeout});
        }
        ++next;
      }
      if (!alive()) {
        died = true;
        for (auto& [rid, p] : in_flight) out[p.slot] = Outcome::failed(Failure::generation_failure);
        in_flight.clear();
        for (; next < requests.size(); ++next) {
          out[next] = Outcome::failed(Failure::generation_failure);
        }
        break;
      }
      if (in_flight.empty()) continue;

      auto earliest = Clock::time_point::max();
      for (const auto& [rid, p] : in_flight) earliest = std::min(earliest, p.deadline);
      const auto now = Clock::now();
      int wait_ms = 0;
      if (earliest > now) {
        wait_ms = static_cast<int>(
            std::chrono::ceil<std::chrono::milliseconds>(earliest - now).count());
      }
      pollfd pfd{from_child_, POLLIN, 0};
      int rc = ::poll(&pfd, 1, wait_ms);
      if (rc > 0) {
        if (!read_available()) mark_dead();
        while (auto line = pop_line()) {
          nlohmann::json resp = nlohmann::json::parse(*line, nullptr, false);
          if (resp.is_discarded() || !resp.is_object() || !resp.contains("request_id") ||
              !resp["request_id"].is_number_unsigned()) {
            continue;
          }
          auto it = in_flight.find(resp["request_id"].get<std::uint64_t>());
          if (it == in_flight.end()) continue;  // late or unknown
          out[it->second.slot] = outcome_from_json(resp);
          in_flight.erase(it);
          ++answered;
        }
      } else if (rc < 0 && errno != EINTR) {
        mark_dead();
      }
      const auto after = Clock::now();
      for (auto it = in_flight.begin(); it != in_flight.end();) {
        if (it->second.deadline <= after) {
          out[it->second.slot] = Outcome::failed(Failure::timeout);
          it = in_flight.erase(it);
        } else {
          ++it;
        }
      }
    }
    if (died && answered == 0) {
      if (++fruitless_restarts_ >= kMaxFruitlessRestarts) {
        throw BackendError("backend process '" + command_ + "' keeps exiting without answering");
      }
    } else if (answered > 0) {
      fruitless_restarts_ = 0;
    }
    return out;
  }

 private:
  bool alive() const noexcept { return pid_ > 0; }

  void ensure_running() {
    if (alive()) return;
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0) {
      throw BackendError(std::string("pipe: ") + std::strerror(errno));
    }
    pid_t pid = ::fork();
    if (pid < 0) throw BackendError(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    to_child_ = to_child[1];
    from_child_ = from_child[0];
    pid_ = pid;
    buffer_.clear();
  }

  bool write_line(const std::string& line) {
    std::string data = line + '\n';
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
      ssize_t n = ::write(to_child_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        mark_dead();
        return false;
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    return true;
  }

  bool read_available() {
    char chunk[4096];
    ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n <= 0) return n < 0 && errno == EINTR;
    buffer_.append(chunk, static_cast<std::size_t>(n));
    return true;
  }

  std::optional<std::string> pop_line() {
    auto nl = buffer_.find('\n');
    if (nl == std::string::npos) return std::nullopt;
    std::string line = buffer_.substr(0, nl);
    buffer_.erase(0, nl + 1);
    return line;
  }

  void mark_dead() { stop(); }

  void stop() {
    if (to_child_ >= 0) ::close(to_child_);
    if (from_child_ >= 0) ::close(from_child_);
    to_child_ = from_child_ = -1;
    if (pid_ > 0) {
      int status = 0;
      if (::waitpid(pid_, &status, WNOHANG) == 0) {
        ::kill(pid_, SIGTERM);
        ::waitpid(pid_, &status, 0);
      }
    }
    pid_ = -1;
  }

  std::string command_;
  const Space& space_;
  double timeout_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::uint64_t next_request_id_ = 0;
  int fruitless_restarts_ = 0;
};

}  // namespace hardspot
