#pragma once

// Append-only run traces: one JSON object per line. Every record carries a
// sequence number and a logical timestamp (the budget used so far) so that
// repeated runs produce byte-identical files.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hardspot/rng.hpp"

namespace hardspot {

inline constexpr int kTraceFormatVersion = 1;

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void write(const std::string& line) = 0;
  virtual void flush() {}

  void emit(std::string_view type, std::uint64_t budget_used, nlohmann::json fields) {
    fields["seq"] = seq_++;
    fields["t"] = budget_used;
    fields["type"] = type;
    std::string line = fields.dump();
    digest_ = fnv1a(line, digest_);
    digest_ = fnv1a("\n", digest_);
    write(line);
  }

  std::uint64_t sequence() const noexcept { return seq_; }
  std::uint64_t digest() const noexcept { return digest_; }

  /// Continues numbering and digest after `lines` already-persisted records.
  void resume_from(std::uint64_t seq, std::uint64_t digest) noexcept {
    seq_ = seq;
    digest_ = digest;
  }

 private:
  std::uint64_t seq_ = 0;
  std::uint64_t digest_ = 0xcbf29ce484222325ULL;
};

class MemoryTrace final : public TraceSink {
 public:
  void write(const std::string& line) override { lines_.push_back(line); }
  const std::vector<std::string>& lines() const noexcept { return lines_; }
  std::string text() const {
    std::string out;
    for (const auto& l : lines_) out += l + '\n';
    return out;
  }

 private:
  std::vector<std::string> lines_;
};

class FileTrace final : public TraceSink {
 public:
  FileTrace(const std::string& path, bool append) : path_(path) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open trace file " + path);
  }
  void write(const std::string& line) override { out_ << line << '\n'; }
  void flush() override { out_.flush(); }

 private:
  std::string path_;
  std::ofstream out_;
};

/// Reads a trace file into parsed records. Throws on unreadable files or
/// malformed lines.
inline std::vector<nlohmann::json> read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error(path + ":" + std::to_string(n) + ": bad record");
    out.push_back(std::move(j));
  }
  return out;
}

/// FNV-1a digest over the first `lines` lines of a trace file, as written.
inline std::uint64_t trace_prefix_digest(const std::string& path, std::uint64_t lines) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::string line;
  for (std::uint64_t k = 0; k < lines; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error("trace shorter than snapshot records");
    h = fnv1a(line, h);
    h = fnv1a("\n", h);
  }
  return h;
}

}  // namespace hardspot
