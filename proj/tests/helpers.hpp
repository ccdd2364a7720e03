#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "epgn/error.hpp"
#include "epgn/rng.hpp"
#include "epgn/tensor.hpp"

namespace testing {

inline epgn::Tensor random_matrix(std::size_t r, std::size_t c, epgn::RngStream& rng,
                                  double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return epgn::Tensor::matrix(r, c, std::move(v));
}

inline std::vector<double> to_vec(const epgn::Tensor& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("epgn_test_" + name + "_" +
                                                     std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(EPGN_FIXTURE_DIR) / name;
}

// Kind of the epgn::Error thrown by fn, or nullopt when nothing is thrown.
inline std::optional<epgn::ErrorKind> error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const epgn::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace testing
