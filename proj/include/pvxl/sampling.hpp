#pragma once

// Generation pipelines and energy-distance ranking of image sets.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pvxl/model.hpp"

namespace pvxl {

/// Latent draws from the prior: one block-Gibbs chain per latent (RBM), or
/// standard normals (Gaussian). Empty for a decoder-only model.
template <class T>
LatentValues<T> sample_prior_latents(const ParamSet<T>& params, const ModelConfig& cfg, std::size_t n,
                                     int gibbs_steps, std::uint64_t seed);

/// Row i of the batch holds latent i / per_latent.
template <class T>
LatentValues<T> repeat_latents(const LatentValues<T>& z, std::size_t per_latent);

/// `n_latents` prior draws after `gibbs_steps` alternations, each decoded
/// `per_latent` times. Images [n_latents * per_latent, H, W, C], grouped by
/// latent.
template <class T>
Tensor<std::uint8_t> generate_from_prior(const ParamSet<T>& params, const ModelConfig& cfg, std::size_t n_latents,
                                         std::size_t per_latent, int gibbs_steps, std::uint64_t seed);

/// For every image, `per_image` discrete posterior draws each decoded once.
/// Images [N * per_image, H, W, C], grouped by source image.
template <class T>
Tensor<std::uint8_t> reconstruct(const ParamSet<T>& params, const ModelConfig& cfg, const Tensor<std::uint8_t>& images,
                                 std::size_t per_image, std::uint64_t seed);

/// Pixels in model space: bits as 0/1, bytes scaled to [-1, 1]. Rows are
/// images flattened to vectors: [N, H * W * C].
Tensor<double> pixel_space(const Tensor<std::uint8_t>& images, bool binary);

/// 2 E|a - b| - E|a - a'| - E|b - b'| over all ordered pairs, self-pairs
/// included (V-statistic). Throws std::invalid_argument for empty sets.
double energy_distance(const Tensor<double>& a, const Tensor<double>& b);
/// Mean Euclidean distance over distinct pairs; needs two rows.
double mutual_energy_distance(const Tensor<double>& set);
/// Row indices in ascending order of mutual distance, or of energy distance
/// to {reference} when given (ties keep input order).
std::vector<std::size_t> rank_rows(std::span<const Tensor<double>> rows,
                                   const std::optional<Tensor<double>>& reference = std::nullopt);

}  // namespace pvxl
