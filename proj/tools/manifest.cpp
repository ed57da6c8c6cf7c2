#include "manifest.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

std::string hash_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunManifest::RunManifest(std::string subcommand)
    : subcommand_(std::move(subcommand)), start_(std::chrono::steady_clock::now()) {}

void RunManifest::input_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    inputs_[path] = nullptr;
    return;
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  inputs_[path] = {{"fnv1a64", hash_hex(bytes)}, {"bytes", bytes.size()}};
}

void RunManifest::output(const std::string& name, const std::string& contents) {
  outputs_[name] = {{"fnv1a64", hash_hex(contents)}, {"bytes", contents.size()}};
}

void RunManifest::write(const std::string& path, int exit_code, const std::string& error) const {
  const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  nlohmann::json j = {{"subcommand", subcommand_},
                      {"params", params_},
                      {"seed", seed_},
                      {"inputs", inputs_},
                      {"outputs", outputs_},
                      {"duration_ms", ms},
                      {"exit_code", exit_code},
                      {"status", exit_code == 0 ? "ok" : "error"}};
  if (!error.empty()) j["error"] = error;
  if (path.empty()) {
    std::cerr << "manifest " << j.dump() << "\n";
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot write manifest '" << path << "'\n";
    return;
  }
  out << j.dump(2) << "\n";
}
