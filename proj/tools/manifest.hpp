#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

// One manifest per run: what was asked, what was read, what was produced.
class RunManifest {
 public:
  explicit RunManifest(std::string subcommand);

  void param(const std::string& key, nlohmann::json value) { params_[key] = std::move(value); }
  void seed(std::uint64_t s) { seed_ = s; }
  // Hashes the file contents now; a missing file is recorded as null.
  void input_file(const std::string& path);
  void output(const std::string& name, const std::string& contents);

  // Writes to `path`, or one line on stderr when path is empty.
  void write(const std::string& path, int exit_code, const std::string& error) const;

 private:
  std::string subcommand_;
  nlohmann::json params_ = nlohmann::json::object();
  std::uint64_t seed_ = 0;
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json outputs_ = nlohmann::json::object();
  std::chrono::steady_clock::time_point start_;
};

std::string hash_hex(const std::string& bytes);
