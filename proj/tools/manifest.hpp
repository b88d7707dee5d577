#pragma once

// Run manifest written next to every command's outputs.

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eiou/common.hpp"

#ifndef EIOU_VERSION
#define EIOU_VERSION "0.0.0"
#endif

namespace cli {

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw eiou::IoError("cannot open '" + path + "' for hashing");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw eiou::Error("sha256 init failed");
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx.get(), md.data(), &n);
  std::ostringstream hex;
  for (unsigned int k = 0; k < n; ++k) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return hex.str();
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

class Manifest {
 public:
  Manifest(std::string command, std::filesystem::path out_dir)
      : command_(std::move(command)), out_dir_(std::move(out_dir)), started_(utc_now()) {}

  const std::filesystem::path& out_dir() const { return out_dir_; }
  std::filesystem::path output(const std::string& name) {
    outputs_.push_back(name);
    return out_dir_ / name;
  }

  void add_input(const std::string& role, const std::string& path) {
    inputs_[role] = {{"path", path}, {"sha256", sha256_file(path)}};
  }
  void set_config(nlohmann::json cfg) { config_ = std::move(cfg); }
  void set_seeds(std::vector<std::uint64_t> seeds) { seeds_ = std::move(seeds); }
  void set_result(nlohmann::json r) { result_ = std::move(r); }

  // Writes manifest.json; `error` is empty on success.
  void write(const std::string& error = {}) const {
    nlohmann::json j;
    j["command"] = command_;
    j["tool_version"] = EIOU_VERSION;
    j["config"] = config_;
    j["seeds"] = seeds_;
    j["inputs"] = inputs_.is_null() ? nlohmann::json::object() : inputs_;
    j["outputs"] = outputs_;
    j["started_at"] = started_;
    j["finished_at"] = utc_now();
    j["status"] = error.empty() ? "ok" : "error";
    if (!error.empty()) j["error"] = error;
    if (!result_.is_null()) j["result"] = result_;
    std::filesystem::create_directories(out_dir_);
    std::ofstream out(out_dir_ / "manifest.json");
    out << j.dump(2) << '\n';
    if (!out) throw eiou::IoError("cannot write manifest in '" + out_dir_.string() + "'");
  }

 private:
  std::string command_;
  std::filesystem::path out_dir_;
  std::string started_;
  nlohmann::json config_;
  nlohmann::json inputs_;
  nlohmann::json result_;
  std::vector<std::uint64_t> seeds_;
  std::vector<std::string> outputs_;
};

}  // namespace cli
