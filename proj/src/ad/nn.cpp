#include "labr/ad/nn.hpp"

#include <cmath>

#include "labr/kern/kernels.hpp"

namespace labr::ad {

Param make_param(std::string name, Shape shape, int fan_in, Rng& rng,
                 double gain) {
  Param p;
  p.name = std::move(name);
  const double a = gain / std::sqrt(static_cast<double>(fan_in));
  p.w.resize(numel(shape));
  p.shape = std::move(shape);
  for (double& v : p.w) v = rng.uniform(-a, a);
  p.g.assign(p.w.size(), 0.0);
  return p;
}

Param make_zero_param(std::string name, Shape shape) {
  Param p;
  p.name = std::move(name);
  p.w.assign(numel(shape), 0.0);
  p.shape = std::move(shape);
  p.g.assign(p.w.size(), 0.0);
  return p;
}

void zero_grads(std::span<Param> params) {
  for (Param& p : params) std::fill(p.g.begin(), p.g.end(), 0.0);
}

std::uint64_t params_checksum(std::span<const Param> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Param& p : params) {
    mix(p.name.data(), p.name.size());
    mix(p.w.data(), p.w.size() * sizeof(double));
  }
  return h;
}

Tensor Binding::bind(Tape& tape, Param& p) {
  Tensor t = tape.input(p.shape, {p.w.data(), p.w.size()}, true);
  entries_.emplace_back(&p, t.id());
  return t;
}

void Binding::accumulate_grads(Tape& tape) {
  for (auto& [param, id] : entries_) {
    auto& g = tape.grad_of(id);
    kern::active().axpy(1.0, g.data(), param->g.data(), g.size());
  }
}

}  // namespace labr::ad
