#pragma once

// Autoregressive decoder with three latent paths, and its encoder.
//
// Decoder: two shifted-convolution streams (u sees rows above, ul sees the
// raster prefix) through six blocks of gated residual layers. Blocks 1-3
// form the down path; each holds n + 1 layers h_{b,1..n+1}, where h_{b,1} is
// the block entry (input convs for b = 1, a stride-2 conv otherwise). Blocks
// 4-6 form the up path with layers j = 0..n; up layer (b', j) takes the skip
// h_{7-b', n+1-j} (and the z3 bridge of that same down layer) as auxiliary
// input. Output is one parameter block per pixel for the likelihood head.
//
// Latents: z1 is decoded to a feature map and joins both streams after the
// input shift; z2 is projected into every gated layer; each z3 component is
// encoded from the ul activation of its down layer and fed back to the
// paired up layer. Parameter names are stable and used by checkpoints.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvxl/likelihood.hpp"
#include "pvxl/params.hpp"
#include "pvxl/rbm.hpp"

namespace pvxl {

enum class PriorKind { rbm, gaussian };

struct ModelConfig {
  std::size_t height = 8;
  std::size_t width = 8;
  HeadSpec head{};
  /// Gated layers per block (n).
  int resnets = 2;
  int filters = 32;
  /// false removes every stride (all blocks at full resolution).
  bool strides = true;
  /// Group sizes; 0 disables a group.
  std::size_t z1 = 32;
  std::size_t z2 = 0;
  bool z3 = false;
  std::size_t z3_units = 64;
  PriorKind prior = PriorKind::rbm;
  bool weight_norm = true;
  /// Width of the z1 decoder stack and the encoder convs.
  int latent_filters = 32;
  /// Channels of each decoded z3 bridge map.
  int bridge_channels = 8;

  /// Throws std::invalid_argument for unusable combinations.
  void validate() const;

  std::size_t channels() const { return static_cast<std::size_t>(head.channels); }
  std::size_t layers_per_block() const { return static_cast<std::size_t>(resnets) + 1; }
  /// (n + 1) * 3.
  std::size_t bridged_layers() const { return 3 * layers_per_block(); }
  bool has_latents() const { return z1 + z2 > 0 || z3; }
  std::size_t z3_total() const { return z3 ? bridged_layers() * z3_units : 0; }
  std::size_t latent_units() const { return z1 + z2 + z3_total(); }

  /// Image, half and quarter resolution (ceil division), [h, w] each.
  std::array<std::array<std::size_t, 2>, 3> pyramid() const;
  /// Decoder resolution at level 0..2 (blocks 1/6, 2/5, 3/4).
  std::array<std::size_t, 2> level_size(int level) const;
  /// Spatial grid of the z3 reductions and the z1 decoder start: pyramid()[2].
  std::array<std::size_t, 2> grid() const { return pyramid()[2]; }

  /// RBM sides: z1|z2 on the left and all z3 on the right; without z3 the
  /// concatenation z1|z2 is split in half (left gets the extra unit).
  std::size_t rbm_left() const;
  std::size_t rbm_right() const;
};

struct LayerId {
  int block = 0;
  int index = 0;
  friend bool operator==(const LayerId&, const LayerId&) = default;
};

/// Down layer (b, i), b in 1..3, i in 1..n+1, pairs with up layer
/// (7 - b, n + 1 - i), j in 0..n; the map is its own inverse. Throws
/// std::invalid_argument for ids outside both ranges.
LayerId skip_partner(const ModelConfig& cfg, LayerId layer);
/// Down layers in order (1,1), (1,2), ..., (3, n+1).
std::vector<LayerId> down_layers(const ModelConfig& cfg);

/// Per-group latent values of any form (logits, relaxed, bits).
template <class V>
struct Latents {
  V z1{};
  V z2{};
  std::vector<V> z3;
};
template <class T>
using LatentVars = Latents<Var<T>>;
template <class T>
using LatentValues = Latents<Tensor<T>>;

template <class T>
LatentVars<T> constant_latents(Tape<T>& tape, const LatentValues<T>& z);
template <class T>
LatentValues<T> latent_values(const LatentVars<T>& z);

/// Encoder outputs per group; for a Gaussian prior each is [mean | log-std].
template <class T>
struct Posterior {
  LatentVars<T> logits;
  LatentVars<T> values;
  Var<T> head;
};

/// Deterministic initialization; cast to float for training.
ParamSet<double> init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Pixels scaled to [-1, 1]: bits as 2x - 1, bytes as 2x/255 - 1.
template <class T>
Var<T> model_input(Tape<T>& tape, const ModelConfig& cfg, const Tensor<std::uint8_t>& x);

enum class ShiftKind { down, down_right };

/// h + a * sigmoid(g) with [a | g] = conv(concat_elu(conv(concat_elu(h)) +
/// nin(concat_elu(aux)) + dense(z2))). `aux` and `z2` may be unbound.
template <class T>
Var<T> gated_resnet(const Binder<T>& b, const std::string& name, const Var<T>& h, const Var<T>& aux,
                    const Var<T>& z2, ShiftKind kind);

/// Stream activations of every down layer, in down_layers() order.
template <class T>
struct DownPass {
  std::vector<Var<T>> u;
  std::vector<Var<T>> ul;
};

template <class T>
DownPass<T> decoder_down(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x, const LatentVars<T>& z);
/// Per-pixel head parameters [B, H, W, P].
template <class T>
Var<T> decoder_up(const Binder<T>& b, const ModelConfig& cfg, const DownPass<T>& down, const LatentVars<T>& z);
template <class T>
Var<T> decode_teacher_forced(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x, const LatentVars<T>& z);

template <class T>
Var<T> encode_z1(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x);
template <class T>
Var<T> encode_z2(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x);
/// One logit vector per down layer, read from the ul stream.
template <class T>
std::vector<Var<T>> encode_z3(const Binder<T>& b, const ModelConfig& cfg, const DownPass<T>& down);

/// Bernoulli groups: relaxed sample at temperature tau, bits when tau == 0.
/// Gaussian groups: mean + exp(log-std) * noise.
template <class T>
Var<T> posterior_sample(const ModelConfig& cfg, const Var<T>& logits, Rng& rng, double tau);

/// Encoders for z1/z2, sample, one down pass serving both the decoder and
/// the z3 heads, sample z3, up pass.
template <class T>
Posterior<T> posterior_forward(const Binder<T>& b, const ModelConfig& cfg, const Tensor<std::uint8_t>& x, Rng& rng,
                               double tau);

/// RBM left and right sides [B, m], [B, k] assembled from latent values.
template <class T>
std::array<Var<T>, 2> rbm_sides(const ModelConfig& cfg, const LatentVars<T>& z);
/// Inverse of rbm_sides for discrete prior samples.
template <class T>
LatentValues<T> latents_from_states(const ModelConfig& cfg, std::span<const RbmState> states);

template <class T>
struct Generation {
  Tensor<std::uint8_t> images;
  /// Head parameters in effect when each pixel was drawn.
  Tensor<T> params;
};

/// Raster-order sampling: for every pixel the decoder reruns on the
/// partial canvas, the pixel is drawn from its head and written back.
template <class T>
Generation<T> generate(const ParamSet<T>& params, const ModelConfig& cfg, const LatentValues<T>& z, std::size_t batch,
                       Rng& rng);

}  // namespace pvxl
