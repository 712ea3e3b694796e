#pragma once

#include <cstdint>
#include <vector>

#include "cutmixsl/protocol.hpp"

namespace cutmixsl {

// Two-class patch dataset standing in for a small image task. Class means
// are two tensors `separation` apart along a random direction; samples add
// i.i.d. jitter. class1_jitter_scale > 1 makes class 1 systematically harder
// (larger residual gradients), the asymmetry the label-leak study needs.
struct SyntheticSpec {
  std::size_t n_patches = 8;
  std::size_t patch_dim = 4;
  std::size_t classes = 2;
  double separation = 3.0;
  double jitter = 0.25;
  double class1_jitter_scale = 1.0;
};

// per_client samples for each of n_clients, classes alternating with a
// random per-client phase so every client presents both classes over time.
std::vector<std::vector<Sample>> make_two_class_dataset(const SyntheticSpec& spec,
                                                        std::size_t n_clients,
                                                        std::size_t per_client, RngStream& rng);

}  // namespace cutmixsl
