#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "vid2act/autodiff.hpp"

namespace vid2act {

/// Single-file container of named byte blobs. Checkpoints use it to bundle a
/// `config.json` entry with one entry per parameter tensor.
///
/// Layout (little-endian): magic "V2AARCH1", u32 entry count, then per entry
/// u32 name length, name bytes, u64 payload length, payload bytes.
class Archive {
 public:
  void put(const std::string& name, std::string bytes);
  void put_json(const std::string& name, const nlohmann::json& j);
  void put_matrix(const std::string& name, const ad::Matrix& m);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const std::string& get(const std::string& name) const;
  nlohmann::json get_json(const std::string& name) const;
  ad::Matrix get_matrix(const std::string& name) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  void write(const std::filesystem::path& path) const;
  static Archive read(const std::filesystem::path& path);

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace vid2act
