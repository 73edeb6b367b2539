#pragma once

// Trainable parameter storage and tape binding. Parameters live outside any
// tape (trained weights are immutable at inference time and shareable across
// threads); each forward pass binds them onto its tape as tracked leaves and
// pulls the leaf gradients back after backward().

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "labr/ad/tensor.hpp"
#include "labr/util/rng.hpp"

namespace labr::ad {

struct Param {
  std::string name;
  Shape shape;
  std::vector<double> w;  // values
  std::vector<double> g;  // accumulated gradient

  int size() const { return static_cast<int>(w.size()); }
};

// Uniform init in [-a, a] with a = gain / sqrt(fan_in).
Param make_param(std::string name, Shape shape, int fan_in, Rng& rng,
                 double gain = 1.0);
Param make_zero_param(std::string name, Shape shape);

void zero_grads(std::span<Param> params);

// FNV-1a over the raw value bytes of every parameter, in order. Used for
// determinism checks and crash diagnostics.
std::uint64_t params_checksum(std::span<const Param> params);

// Records which tape leaf each parameter was bound to in one forward pass.
class Binding {
 public:
  Tensor bind(Tape& tape, Param& p);
  // Adds each bound leaf's gradient into its parameter's .g.
  void accumulate_grads(Tape& tape);

 private:
  std::vector<std::pair<Param*, int>> entries_;
};

}  // namespace labr::ad
