#pragma once

#include <filesystem>
#include <string>

#include "muse/rng.hpp"

namespace muse::test {

// unique scratch directory under the build tree, removed on destruction
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string &tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("muse_test_" + tag + "_" + std::to_string(++counter) + "_" +
            std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string &name) const { return (path / name).string(); }
};

inline std::vector<float> unit_vec(Rng &rng, uint32_t dim) {
  std::vector<float> v(dim);
  double sq = 0;
  for (uint32_t d = 0; d < dim; ++d) {
    v[d] = float(rng.normal());
    sq += double(v[d]) * double(v[d]);
  }
  const float inv = float(1.0 / std::sqrt(sq));
  for (float &x : v) x *= inv;
  return v;
}

}  // namespace muse::test
