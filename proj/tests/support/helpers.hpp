#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "exsum/dataset.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("exsum-" + tag + "-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::permissions(path_, std::filesystem::perms::owner_all, std::filesystem::perm_options::add, ec);
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

  std::filesystem::path write(const std::string& name, const std::string& content) const {
    std::ofstream(path_ / name, std::ios::binary) << content;
    return path_ / name;
  }

 private:
  std::filesystem::path path_;
};

inline exsum::Instance plain_instance(std::string id, std::vector<double> attributions) {
  exsum::Instance inst;
  inst.id = std::move(id);
  for (std::size_t i = 0; i < attributions.size(); ++i) inst.tokens.push_back("t" + std::to_string(i));
  inst.attributions = std::move(attributions);
  inst.label = 0;
  inst.predicted_probs = {0.5, 0.5};
  return inst;
}

}  // namespace testutil
