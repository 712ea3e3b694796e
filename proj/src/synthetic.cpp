#include "cutmixsl/synthetic.hpp"

#include <cmath>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

std::vector<std::vector<Sample>> make_two_class_dataset(const SyntheticSpec& spec,
                                                        std::size_t n_clients,
                                                        std::size_t per_client, RngStream& rng) {
  if (spec.classes != 2) throw ParameterError("make_two_class_dataset: binary task only");
  if (n_clients < 1 || per_client < 1)
    throw ParameterError("make_two_class_dataset: empty dataset");

  Matrix direction(spec.n_patches, spec.patch_dim);
  for (double& v : direction.data) v = rng.normal(1.0);
  const double norm = l2_norm(direction.data);
  for (double& v : direction.data) v /= norm;

  Matrix mean0(spec.n_patches, spec.patch_dim);
  Matrix mean1(spec.n_patches, spec.patch_dim);
  for (std::size_t e = 0; e < direction.size(); ++e) {
    mean0.data[e] = -0.5 * spec.separation * direction.data[e];
    mean1.data[e] = 0.5 * spec.separation * direction.data[e];
  }

  std::vector<std::vector<Sample>> data(n_clients);
  for (std::size_t ci = 0; ci < n_clients; ++ci) {
    data[ci].reserve(per_client);
    for (std::size_t j = 0; j < per_client; ++j) {
      const std::size_t cls = j % 2;  // balanced pool
      const Matrix& mean = cls == 0 ? mean0 : mean1;
      const double sd = spec.jitter * (cls == 1 ? spec.class1_jitter_scale : 1.0);
      Sample s;
      s.input = Matrix(spec.n_patches, spec.patch_dim);
      for (std::size_t e = 0; e < s.input.size(); ++e)
        s.input.data[e] = mean.data[e] + rng.normal(sd * sd);
      s.label = one_hot(2, cls);
      data[ci].push_back(std::move(s));
    }
    // Shuffle presentation order so per-round classes are independent
    // across clients.
    const auto perm = rng.permutation(static_cast<std::uint32_t>(per_client));
    std::vector<Sample> shuffled;
    shuffled.reserve(per_client);
    for (const std::uint32_t idx : perm) shuffled.push_back(std::move(data[ci][idx]));
    data[ci] = std::move(shuffled);
  }
  return data;
}

}  // namespace cutmixsl
