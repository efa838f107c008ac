#include "pvxl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "pvxl/objective.hpp"

namespace pvxl {

namespace {

template <class T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t per) {
  Shape s = x.shape();
  const std::size_t width = x.size() / s[0];
  s[0] *= per;
  Tensor<T> out(s);
  for (std::size_t r = 0; r < s[0]; ++r) std::copy_n(x.data() + (r / per) * width, width, out.data() + r * width);
  return out;
}

// Accumulated in a fixed order so results do not depend on the caller.
double distance(const double* a, const double* b, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double mean_cross(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t d = a.dim(1);
  double s = 0;
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(0); ++j) s += distance(a.data() + i * d, b.data() + j * d, d);
  return s / static_cast<double>(a.dim(0) * b.dim(0));
}

// Mean over ordered pairs with self-pairs counted as zero.
double mean_within(const Tensor<double>& a) {
  const std::size_t n = a.dim(0), d = a.dim(1);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += distance(a.data() + i * d, a.data() + j * d, d);
  return 2 * s / static_cast<double>(n * n);
}

void check_set(const Tensor<double>& a, const char* what) {
  if (a.rank() != 2) throw ShapeError(std::string(what) + ": expected [N, D] rows");
  if (a.dim(0) == 0) throw std::invalid_argument(std::string(what) + ": empty set");
}

}  // namespace

template <class T>
LatentValues<T> sample_prior_latents(const ParamSet<T>& params, const ModelConfig& cfg, std::size_t n,
                                     int gibbs_steps, std::uint64_t seed) {
  if (!cfg.has_latents()) return {};
  if (cfg.prior == PriorKind::gaussian) {
    Rng rng(seed);
    LatentValues<T> z;
    if (cfg.z1) z.z1 = normal_tensor<T>(Shape{n, cfg.z1}, 1.0, rng);
    if (cfg.z2) z.z2 = normal_tensor<T>(Shape{n, cfg.z2}, 1.0, rng);
    if (cfg.z3)
      for (std::size_t g = 0; g < cfg.bridged_layers(); ++g) z.z3.push_back(normal_tensor<T>(Shape{n, cfg.z3_units}, 1.0, rng));
    return z;
  }
  const auto states = gibbs_chain(rbm_params(params), gibbs_steps, static_cast<int>(n), 0, seed);
  return latents_from_states<T>(cfg, states);
}

template <class T>
LatentValues<T> repeat_latents(const LatentValues<T>& z, std::size_t per_latent) {
  LatentValues<T> out;
  if (!z.z1.empty()) out.z1 = repeat_rows(z.z1, per_latent);
  if (!z.z2.empty()) out.z2 = repeat_rows(z.z2, per_latent);
  for (const auto& g : z.z3) out.z3.push_back(repeat_rows(g, per_latent));
  return out;
}

template <class T>
Tensor<std::uint8_t> generate_from_prior(const ParamSet<T>& params, const ModelConfig& cfg, std::size_t n_latents,
                                         std::size_t per_latent, int gibbs_steps, std::uint64_t seed) {
  const auto z = repeat_latents(sample_prior_latents(params, cfg, n_latents, gibbs_steps, derive_seed(seed, 0)),
                                per_latent);
  Rng rng(derive_seed(seed, 1));
  return generate(params, cfg, z, n_latents * per_latent, rng).images;
}

template <class T>
Tensor<std::uint8_t> reconstruct(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<std::uint8_t>& images,
                                 std::size_t per_image, std::uint64_t seed) {
  const auto x = repeat_rows(images, per_image);
  LatentValues<T> z;
  if (cfg.has_latents()) {
    Tape<T> tape;
    Binder<T> b(tape, params, false);
    Rng rng(derive_seed(seed, 0));
    // Discrete (Bernoulli) or sampled (Gaussian) posterior draws.
    z = latent_values(posterior_forward(b, cfg, x, rng, 0.0).values);
  }
  Rng rng(derive_seed(seed, 1));
  return generate(params, cfg, z, x.dim(0), rng).images;
}

Tensor<double> pixel_space(const Tensor<std::uint8_t>& images, bool binary) {
  const std::size_t n = images.dim(0);
  Tensor<double> out(Shape{n, images.size() / n});
  for (std::size_t i = 0; i < images.size(); ++i) out[i] = binary ? images[i] : 2.0 * images[i] / 255.0 - 1.0;
  return out;
}

double energy_distance(const Tensor<double>& a, const Tensor<double>& b) {
  check_set(a, "energy_distance");
  check_set(b, "energy_distance");
  if (a.dim(1) != b.dim(1)) throw ShapeError("energy_distance: row widths differ");
  // Evaluated in a canonical argument order so D(A, B) == D(B, A) exactly.
  const bool swap = std::lexicographical_compare(b.values().begin(), b.values().end(), a.values().begin(),
                                                 a.values().end());
  const Tensor<double>& p = swap ? b : a;
  const Tensor<double>& q = swap ? a : b;
  return 2 * mean_cross(p, q) - mean_within(p) - mean_within(q);
}

double mutual_energy_distance(const Tensor<double>& set) {
  check_set(set, "mutual_energy_distance");
  const std::size_t n = set.dim(0), d = set.dim(1);
  if (n < 2) throw std::invalid_argument("mutual_energy_distance: needs at least two images");
  double s = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) s += distance(set.data() + i * d, set.data() + j * d, d);
  return s / static_cast<double>(n * (n - 1) / 2);
}

std::vector<std::size_t> rank_rows(std::span<const Tensor<double>> rows, const std::optional<Tensor<double>>& reference) {
  std::vector<double> key(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    key[i] = reference ? energy_distance(rows[i], *reference) : mutual_energy_distance(rows[i]);
  }
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  return order;
}

#define PVXL_INSTANTIATE_SAMPLING(T)                                                                              \
  template LatentValues<T> sample_prior_latents<T>(const ParamSet<T>&, const ModelConfig&, std::size_t, int,     \
                                                   std::uint64_t);                                               \
  template LatentValues<T> repeat_latents<T>(const LatentValues<T>&, std::size_t);                               \
  template Tensor<std::uint8_t> generate_from_prior<T>(const ParamSet<T>&, const ModelConfig&, std::size_t,      \
                                                       std::size_t, int, std::uint64_t);                         \
  template Tensor<std::uint8_t> reconstruct<T>(const ParamSet<T>&, const ModelConfig&, const Tensor<std::uint8_t>&, \
                                               std::size_t, std::uint64_t);

PVXL_INSTANTIATE_SAMPLING(float)
PVXL_INSTANTIATE_SAMPLING(double)

}  // namespace pvxl
