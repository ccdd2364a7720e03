#include <cstdlib>
#include <string>

#include "epgn/kernels.hpp"

namespace epgn::kernels {

#if defined(EPGN_HAVE_AVX2)
const KernelTable& avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(EPGN_HAVE_AVX2)
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* choose_default() {
  if (const char* env = std::getenv("EPGN_KERNELS")) {
    const std::string wanted(env);
    if (wanted == "scalar") return &scalar_table();
    if (wanted == "avx2" && avx2_table() != nullptr) return avx2_table();
  }
  if (const KernelTable* simd = avx2_table()) return simd;
  return &scalar_table();
}

const KernelTable*& current() {
  static const KernelTable* table = choose_default();
  return table;
}

}  // namespace

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  if (name == "scalar") {
    current() = &scalar_table();
    return true;
  }
  if (name == "avx2" && avx2_table() != nullptr) {
    current() = avx2_table();
    return true;
  }
  return false;
}

}  // namespace epgn::kernels
