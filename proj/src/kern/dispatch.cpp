#include "labr/kern/kernels.hpp"

#include <cstdlib>

namespace labr::kern {
namespace {

const Kernels* pick_auto() {
  if (const Kernels* v = avx2()) return v;
  return &scalar();
}

const Kernels* g_active = nullptr;

const Kernels* init_active() {
  if (const char* env = std::getenv("LABR_KERNEL")) {
    std::string_view want(env);
    if (want == "scalar") return &scalar();
    if (want == "avx2") {
      if (const Kernels* v = avx2()) return v;
    }
  }
  return pick_auto();
}

}  // namespace

const Kernels& active() {
  if (!g_active) g_active = init_active();
  return *g_active;
}

bool set_backend(std::string_view name) {
  if (name == "scalar") {
    g_active = &scalar();
    return true;
  }
  if (name == "avx2") {
    if (const Kernels* v = avx2()) {
      g_active = v;
      return true;
    }
    return false;
  }
  if (name == "auto") {
    g_active = pick_auto();
    return true;
  }
  return false;
}

}  // namespace labr::kern
