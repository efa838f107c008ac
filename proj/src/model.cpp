#include "pvxl/model.hpp"

#include <stdexcept>

#include "layers.hpp"
#include "pvxl/relaxation.hpp"

namespace pvxl {

namespace {

using layers::Init;

std::size_t ceil_half(std::size_t n) { return (n + 1) / 2; }

std::string layer_name(const char* prefix, int block, int index) {
  return std::string(prefix) + std::to_string(block) + "." + std::to_string(index);
}

std::size_t down_index(const ModelConfig& cfg, LayerId id) {
  return static_cast<std::size_t>(id.block - 1) * cfg.layers_per_block() + static_cast<std::size_t>(id.index - 1);
}

// Kernel = stride = f and trailing pad so that `res` maps onto `grid`.
struct Reduction {
  int f = 1;
  int pad = 0;
};

Reduction reduction(std::size_t res, std::size_t grid) {
  const std::size_t f = (res + grid - 1) / grid;
  return {static_cast<int>(f), static_cast<int>(f * grid - res)};
}

std::size_t group_width(const ModelConfig& cfg, std::size_t units) {
  return cfg.prior == PriorKind::gaussian ? 2 * units : units;
}

void add_gated(ParamSet<double>& ps, const ModelConfig& cfg, const std::string& name, ShiftKind kind,
               std::size_t aux_channels, Rng& rng) {
  const auto f = static_cast<std::size_t>(cfg.filters);
  const int kh = 2, kw = kind == ShiftKind::down ? 3 : 2;
  const bool wn = cfg.weight_norm;
  layers::add_conv(ps, name + ".c1", kh, kw, 2 * f, f, Init{wn, 1.0, true}, rng);
  if (aux_channels > 0) layers::add_dense(ps, name + ".aux", 2 * aux_channels, f, Init{wn, 1.0, false}, rng);
  if (cfg.z2 > 0) layers::add_dense(ps, name + ".z2", cfg.z2, f, Init{wn, 1.0, false}, rng);
  layers::add_conv(ps, name + ".c2", kh, kw, 2 * f, 2 * f, Init{wn, 0.1, true}, rng);
}

template <class T>
Var<T> flatten(const Var<T>& x) {
  return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
}

template <class T>
Var<T> z1_map(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& z1) {
  const auto p = cfg.pyramid();
  const std::size_t g = p[2][0], h1 = p[1][0], h0 = p[0][0];
  const auto fz = static_cast<std::size_t>(cfg.latent_filters);
  const Pad2d same{1, 1, 1, 1};
  auto h = reshape(elu(layers::linear(b, "dec.f1.fc", z1)), Shape{z1.dim(0), g, g, fz});
  const int e1 = static_cast<int>(2 * g - h1), e0 = static_cast<int>(2 * h1 - h0);
  h = elu(layers::tconv(b, "dec.f1.up1", h, 2, Pad2d{0, e1, 0, e1}, h1, h1));
  h = elu(layers::conv(b, "dec.f1.c1", h, 1, same));
  h = elu(layers::tconv(b, "dec.f1.up2", h, 2, Pad2d{0, e0, 0, e0}, h0, h0));
  return elu(layers::conv(b, "dec.f1.c2", h, 1, same));
}

template <class T>
Var<T> z3_map(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& z3, LayerId down, std::size_t res) {
  const std::size_t g = cfg.grid()[0];
  const auto cb = static_cast<std::size_t>(cfg.bridge_channels);
  const std::string name = layer_name("dec.z3.", down.block, down.index);
  auto h = reshape(elu(layers::linear(b, name + ".fc", z3)), Shape{z3.dim(0), g, g, cb});
  const Reduction r = reduction(res, g);
  return layers::tconv(b, name + ".up", h, r.f, Pad2d{0, r.pad, 0, r.pad}, res, res);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

void ModelConfig::validate() const {
  head.validate();
  if (height != width) throw std::invalid_argument("images must be square");
  if (height < 2) throw std::invalid_argument("images must be at least 2x2");
  if (resnets < 1 || filters < 1 || latent_filters < 1 || bridge_channels < 1) {
    throw std::invalid_argument("layer counts and widths must be positive");
  }
  if (z3 && z3_units == 0) throw std::invalid_argument("z3 groups need at least one unit");
  if (prior == PriorKind::rbm && has_latents()) {
    if (z3 && z1 + z2 == 0) throw std::invalid_argument("an RBM prior with z3 needs z1 or z2 on its left side");
    if (!z3 && z1 + z2 < 2) throw std::invalid_argument("an RBM prior needs at least two latent units");
  }
}

std::array<std::array<std::size_t, 2>, 3> ModelConfig::pyramid() const {
  std::array<std::array<std::size_t, 2>, 3> p{};
  p[0] = {height, width};
  p[1] = {ceil_half(height), ceil_half(width)};
  p[2] = {ceil_half(p[1][0]), ceil_half(p[1][1])};
  return p;
}

std::array<std::size_t, 2> ModelConfig::level_size(int level) const {
  if (level < 0 || level > 2) throw std::invalid_argument("decoder level must be 0, 1 or 2");
  return strides ? pyramid()[static_cast<std::size_t>(level)] : std::array<std::size_t, 2>{height, width};
}

std::size_t ModelConfig::rbm_left() const { return z3 ? z1 + z2 : (z1 + z2 + 1) / 2; }
std::size_t ModelConfig::rbm_right() const { return z3 ? z3_total() : (z1 + z2) / 2; }

LayerId skip_partner(const ModelConfig& cfg, LayerId id) {
  const int n = cfg.resnets;
  const bool down = id.block >= 1 && id.block <= 3 && id.index >= 1 && id.index <= n + 1;
  const bool up = id.block >= 4 && id.block <= 6 && id.index >= 0 && id.index <= n;
  if (!down && !up) {
    throw std::invalid_argument("no layer (" + std::to_string(id.block) + ", " + std::to_string(id.index) +
                                ") for n = " + std::to_string(n));
  }
  return {7 - id.block, n + 1 - id.index};
}

std::vector<LayerId> down_layers(const ModelConfig& cfg) {
  std::vector<LayerId> out;
  for (int b = 1; b <= 3; ++b)
    for (int i = 1; i <= cfg.resnets + 1; ++i) out.push_back({b, i});
  return out;
}

// ---------------------------------------------------------------------------
// Parameters.

ParamSet<double> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet<double> ps;
  const auto f = static_cast<std::size_t>(cfg.filters), c = cfg.channels();
  const auto fz = static_cast<std::size_t>(cfg.latent_filters), cb = static_cast<std::size_t>(cfg.bridge_channels);
  const bool wn = cfg.weight_norm;
  const Init plain{wn, 1.0, true};
  const auto pyr = cfg.pyramid();
  const std::size_t g = pyr[2][0];

  // Encoder heads.
  if (cfg.z1 > 0) {
    layers::add_conv(ps, "enc.z1.c1", 3, 3, c, fz, plain, rng);
    layers::add_conv(ps, "enc.z1.c2", 3, 3, fz, fz, plain, rng);
    layers::add_conv(ps, "enc.z1.c3", 3, 3, fz, fz, plain, rng);
    layers::add_conv(ps, "enc.z1.c4", 3, 3, fz, fz, plain, rng);
    layers::add_dense(ps, "enc.z1.fc", g * g * fz, group_width(cfg, cfg.z1), Init{wn, 0.5, true}, rng);
  }
  if (cfg.z2 > 0) {
    layers::add_conv(ps, "enc.z2.c1", 3, 3, c, 1, plain, rng);
    layers::add_dense(ps, "enc.z2.fc", pyr[1][0] * pyr[1][1], group_width(cfg, cfg.z2), Init{wn, 0.5, true}, rng);
  }
  if (cfg.z3) {
    for (const LayerId id : down_layers(cfg)) {
      const std::string name = layer_name("enc.z3.", id.block, id.index);
      const Reduction r = reduction(cfg.level_size(id.block - 1)[0], g);
      layers::add_conv(ps, name + ".conv", r.f, r.f, f, 1, plain, rng);
      layers::add_dense(ps, name + ".fc", g * g, group_width(cfg, cfg.z3_units), Init{wn, 0.5, true}, rng);
    }
  }

  // Decoder input and latent paths.
  layers::add_conv(ps, "dec.in.u", 2, 3, c + 1, f, plain, rng);
  layers::add_conv(ps, "dec.in.ulv", 1, 3, c + 1, f, plain, rng);
  layers::add_conv(ps, "dec.in.ulh", 2, 1, c + 1, f, plain, rng);
  if (cfg.z1 > 0) {
    layers::add_dense(ps, "dec.f1.fc", cfg.z1, g * g * fz, plain, rng);
    layers::add_tconv(ps, "dec.f1.up1", 2, 2, fz, fz, plain, rng);
    layers::add_conv(ps, "dec.f1.c1", 3, 3, fz, fz, plain, rng);
    layers::add_tconv(ps, "dec.f1.up2", 2, 2, fz, fz, plain, rng);
    layers::add_conv(ps, "dec.f1.c2", 3, 3, fz, fz, plain, rng);
    layers::add_dense(ps, "dec.z1.u", fz, f, plain, rng);
    layers::add_dense(ps, "dec.z1.ul", fz, f, plain, rng);
  }
  if (cfg.z3) {
    for (const LayerId id : down_layers(cfg)) {
      const std::string name = layer_name("dec.z3.", id.block, id.index);
      const Reduction r = reduction(cfg.level_size(id.block - 1)[0], g);
      layers::add_dense(ps, name + ".fc", cfg.z3_units, g * g * cb, plain, rng);
      layers::add_tconv(ps, name + ".up", r.f, r.f, cb, cb, plain, rng);
    }
  }

  // Down path.
  for (int b = 1; b <= 3; ++b) {
    if (b > 1) {
      layers::add_conv(ps, layer_name("dec.d", b, 1) + ".u", 2, 3, f, f, plain, rng);
      layers::add_conv(ps, layer_name("dec.d", b, 1) + ".ul", 2, 2, f, f, plain, rng);
    }
    for (int i = 2; i <= cfg.resnets + 1; ++i) {
      add_gated(ps, cfg, layer_name("dec.d", b, i) + ".u", ShiftKind::down, 0, rng);
      add_gated(ps, cfg, layer_name("dec.d", b, i) + ".ul", ShiftKind::down_right, f, rng);
    }
  }
  // Up path.
  const std::size_t bridge = cfg.z3 ? cb : 0;
  for (int b = 4; b <= 6; ++b) {
    for (int j = 0; j <= cfg.resnets; ++j) {
      add_gated(ps, cfg, layer_name("dec.u", b, j) + ".u", ShiftKind::down, f + bridge, rng);
      add_gated(ps, cfg, layer_name("dec.u", b, j) + ".ul", ShiftKind::down_right, 2 * f + bridge, rng);
    }
    if (b < 6 && cfg.strides) {
      layers::add_tconv(ps, "dec.up" + std::to_string(b) + ".u", 2, 3, f, f, plain, rng);
      layers::add_tconv(ps, "dec.up" + std::to_string(b) + ".ul", 2, 2, f, f, plain, rng);
    }
  }
  layers::add_dense(ps, "dec.out", f, cfg.head.params_per_pixel(), Init{wn, 0.1, true}, rng);

  if (cfg.prior == PriorKind::rbm && cfg.has_latents()) {
    const RbmParams rbm = init_rbm(cfg.rbm_left(), cfg.rbm_right(), derive_seed(seed, 1));
    ps.add("prior.w", Tensor<double>(Shape{rbm.m, rbm.k}, rbm.w));
    ps.add("prior.a", Tensor<double>(Shape{rbm.m}, rbm.a));
    ps.add("prior.b", Tensor<double>(Shape{rbm.k}, rbm.b));
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Latent plumbing.

template <class T>
LatentVars<T> constant_latents(Tape<T>& tape, const LatentValues<T>& z) {
  LatentVars<T> out;
  if (!z.z1.empty()) out.z1 = tape.constant(z.z1);
  if (!z.z2.empty()) out.z2 = tape.constant(z.z2);
  for (const auto& v : z.z3) out.z3.push_back(tape.constant(v));
  return out;
}

template <class T>
LatentValues<T> latent_values(const LatentVars<T>& z) {
  LatentValues<T> out;
  if (z.z1.valid()) out.z1 = z.z1.value();
  if (z.z2.valid()) out.z2 = z.z2.value();
  for (const auto& v : z.z3) out.z3.push_back(v.value());
  return out;
}

template <class T>
std::array<Var<T>, 2> rbm_sides(const ModelConfig& cfg, const LatentVars<T>& z) {
  std::vector<Var<T>> front;
  if (z.z1.valid()) front.push_back(z.z1);
  if (z.z2.valid()) front.push_back(z.z2);
  if (front.empty()) throw std::invalid_argument("rbm_sides: no z1 or z2 values");
  auto left = front.size() == 1 ? front[0] : concat<T>(std::span<const Var<T>>(front), 1);
  if (cfg.z3) {
    if (z.z3.size() != cfg.bridged_layers()) throw std::invalid_argument("rbm_sides: wrong number of z3 groups");
    return {left, concat<T>(std::span<const Var<T>>(z.z3), 1)};
  }
  const std::size_t m = cfg.rbm_left(), k = cfg.rbm_right();
  return {slice(left, 1, 0, m), slice(left, 1, m, k)};
}

template <class T>
LatentValues<T> latents_from_states(const ModelConfig& cfg, std::span<const RbmState> states) {
  const std::size_t n = states.size(), front = cfg.z1 + cfg.z2;
  LatentValues<T> out;
  if (cfg.z1 > 0) out.z1 = Tensor<T>(Shape{n, cfg.z1});
  if (cfg.z2 > 0) out.z2 = Tensor<T>(Shape{n, cfg.z2});
  if (cfg.z3)
    for (std::size_t g = 0; g < cfg.bridged_layers(); ++g) out.z3.emplace_back(Shape{n, cfg.z3_units});
  for (std::size_t s = 0; s < n; ++s) {
    const RbmState& st = states[s];
    if (st.left.size() != cfg.rbm_left() || st.right.size() != cfg.rbm_right()) {
      throw std::invalid_argument("latents_from_states: state does not match the prior layout");
    }
    std::vector<double> all(st.left);
    all.insert(all.end(), st.right.begin(), st.right.end());
    for (std::size_t i = 0; i < cfg.z1; ++i) out.z1[s * cfg.z1 + i] = static_cast<T>(all[i]);
    for (std::size_t i = 0; i < cfg.z2; ++i) out.z2[s * cfg.z2 + i] = static_cast<T>(all[cfg.z1 + i]);
    for (std::size_t g = 0; g < out.z3.size(); ++g)
      for (std::size_t i = 0; i < cfg.z3_units; ++i)
        out.z3[g][s * cfg.z3_units + i] = static_cast<T>(all[front + g * cfg.z3_units + i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoder.

template <class T>
Var<T> model_input(Tape<T>& tape, const ModelConfig& cfg, const Tensor<std::uint8_t>& x) {
  const Shape want{x.rank() == 4 ? x.dim(0) : 0, cfg.height, cfg.width, cfg.channels()};
  if (x.shape() != want) {
    throw ShapeError("model input " + shape_str(x.shape()) + " does not match " + shape_str(want));
  }
  Tensor<T> v(x.shape());
  const bool bits = cfg.head.kind == HeadKind::bernoulli;
  for (std::size_t i = 0; i < x.size(); ++i) {
    v[i] = bits ? T(2) * static_cast<T>(x[i]) - T(1) : static_cast<T>(2.0 * x[i] / 255.0 - 1.0);
  }
  return tape.constant(std::move(v));
}

template <class T>
Var<T> gated_resnet(const Binder<T>& b, const std::string& name, const Var<T>& h, const Var<T>& aux, const Var<T>& z2,
                    ShiftKind kind) {
  const int kw = kind == ShiftKind::down ? 3 : 2;
  auto shifted = [&](const std::string& n, const Var<T>& x) {
    return kind == ShiftKind::down ? layers::down_shifted_conv(b, n, x, 2, kw, 1)
                                   : layers::down_right_shifted_conv(b, n, x, 2, kw, 1);
  };
  const std::size_t f = h.dim(3);
  auto c1 = shifted(name + ".c1", concat_elu(h));
  if (aux.valid()) {
    if (aux.dim(1) != h.dim(1) || aux.dim(2) != h.dim(2)) {
      throw ShapeError("gated_resnet " + name + ": aux " + shape_str(aux.shape()) + " vs input " +
                       shape_str(h.shape()));
    }
    c1 = add(c1, layers::nin(b, name + ".aux", concat_elu(aux)));
  }
  if (z2.valid()) c1 = add(c1, reshape(layers::linear(b, name + ".z2", z2), Shape{h.dim(0), 1, 1, f}));
  auto c2 = shifted(name + ".c2", concat_elu(c1));
  return add(h, mul(slice(c2, 3, 0, f), sigmoid(slice(c2, 3, f, f))));
}

template <class T>
DownPass<T> decoder_down(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x, const LatentVars<T>& z) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != cfg.height || s[2] != cfg.width || s[3] != cfg.channels()) {
    throw ShapeError("decoder input " + shape_str(s) + " does not match the configuration");
  }
  if ((cfg.z1 > 0) != z.z1.valid() || (cfg.z2 > 0) != z.z2.valid()) {
    throw std::invalid_argument("latent groups do not match the configuration");
  }
  auto ones = b.tape().constant(Tensor<T>(Shape{s[0], s[1], s[2], 1}, T(1)));
  auto xin = concat<T>({x, ones}, 3);
  auto u = downshift(layers::down_shifted_conv(b, "dec.in.u", xin, 2, 3, 1));
  auto ul = add(downshift(layers::down_shifted_conv(b, "dec.in.ulv", xin, 1, 3, 1)),
                rightshift(layers::down_right_shifted_conv(b, "dec.in.ulh", xin, 2, 1, 1)));
  if (z.z1.valid()) {
    auto m = z1_map(b, cfg, z.z1);
    u = add(u, layers::nin(b, "dec.z1.u", m));
    ul = add(ul, layers::nin(b, "dec.z1.ul", m));
  }
  DownPass<T> out;
  out.u.push_back(u);
  out.ul.push_back(ul);
  const int stride = cfg.strides ? 2 : 1;
  for (int blk = 1; blk <= 3; ++blk) {
    if (blk > 1) {
      const std::string name = layer_name("dec.d", blk, 1);
      u = layers::down_shifted_conv(b, name + ".u", u, 2, 3, stride);
      ul = layers::down_right_shifted_conv(b, name + ".ul", ul, 2, 2, stride);
      out.u.push_back(u);
      out.ul.push_back(ul);
    }
    for (int i = 2; i <= cfg.resnets + 1; ++i) {
      const std::string name = layer_name("dec.d", blk, i);
      u = gated_resnet(b, name + ".u", u, Var<T>{}, z.z2, ShiftKind::down);
      ul = gated_resnet(b, name + ".ul", ul, u, z.z2, ShiftKind::down_right);
      out.u.push_back(u);
      out.ul.push_back(ul);
    }
  }
  return out;
}

template <class T>
Var<T> decoder_up(const Binder<T>& b, const ModelConfig& cfg, const DownPass<T>& down, const LatentVars<T>& z) {
  if (down.u.size() != cfg.bridged_layers() || down.ul.size() != cfg.bridged_layers()) {
    throw std::invalid_argument("down pass has the wrong number of layers");
  }
  if (cfg.z3 && z.z3.size() != cfg.bridged_layers()) {
    throw std::invalid_argument("expected " + std::to_string(cfg.bridged_layers()) + " z3 groups, got " +
                                std::to_string(z.z3.size()));
  }
  auto u = down.u.back(), ul = down.ul.back();
  for (int blk = 4; blk <= 6; ++blk) {
    const int level = 6 - blk;
    const std::size_t res = cfg.level_size(level)[0];
    for (int j = 0; j <= cfg.resnets; ++j) {
      const LayerId partner = skip_partner(cfg, {blk, j});
      const std::size_t k = down_index(cfg, partner);
      std::vector<Var<T>> aux_u{down.u[k]}, aux_ul{Var<T>{}, down.ul[k]};
      if (cfg.z3) {
        auto bridge = z3_map(b, cfg, z.z3[k], partner, res);
        aux_u.push_back(bridge);
        aux_ul.push_back(bridge);
      }
      const std::string name = layer_name("dec.u", blk, j);
      u = gated_resnet(b, name + ".u", u, aux_u.size() == 1 ? aux_u[0] : concat<T>(std::span<const Var<T>>(aux_u), 3),
                       z.z2, ShiftKind::down);
      aux_ul[0] = u;
      ul = gated_resnet(b, name + ".ul", ul, concat<T>(std::span<const Var<T>>(aux_ul), 3), z.z2,
                        ShiftKind::down_right);
    }
    if (blk < 6 && cfg.strides) {
      const auto next = cfg.level_size(level - 1);
      const std::string name = "dec.up" + std::to_string(blk);
      u = layers::down_shifted_deconv(b, name + ".u", u, next[0], next[1]);
      ul = layers::down_right_shifted_deconv(b, name + ".ul", ul, next[0], next[1]);
    }
  }
  return layers::nin(b, "dec.out", elu(ul));
}

template <class T>
Var<T> decode_teacher_forced(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x, const LatentVars<T>& z) {
  return decoder_up(b, cfg, decoder_down(b, cfg, x, z), z);
}

// ---------------------------------------------------------------------------
// Encoder.

template <class T>
Var<T> encode_z1(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x) {
  if (cfg.z1 == 0) throw std::invalid_argument("z1 is disabled");
  const Pad2d same{1, 1, 1, 1};
  auto h = elu(layers::conv(b, "enc.z1.c1", x, 2, same));
  h = elu(layers::conv(b, "enc.z1.c2", h, 1, same));
  h = elu(layers::conv(b, "enc.z1.c3", h, 2, same));
  h = elu(layers::conv(b, "enc.z1.c4", h, 1, same));
  return layers::linear(b, "enc.z1.fc", flatten(h));
}

template <class T>
Var<T> encode_z2(const Binder<T>& b, const ModelConfig& cfg, const Var<T>& x) {
  if (cfg.z2 == 0) throw std::invalid_argument("z2 is disabled");
  auto h = elu(layers::conv(b, "enc.z2.c1", x, 2, Pad2d{1, 1, 1, 1}));
  return layers::linear(b, "enc.z2.fc", flatten(h));
}

template <class T>
std::vector<Var<T>> encode_z3(const Binder<T>& b, const ModelConfig& cfg, const DownPass<T>& down) {
  if (!cfg.z3) throw std::invalid_argument("z3 is disabled");
  if (down.ul.size() != cfg.bridged_layers()) {
    throw std::invalid_argument("encode_z3 expects " + std::to_string(cfg.bridged_layers()) + " hidden layers, got " +
                                std::to_string(down.ul.size()));
  }
  const std::size_t g = cfg.grid()[0];
  std::vector<Var<T>> out;
  const auto ids = down_layers(cfg);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::string name = layer_name("enc.z3.", ids[k].block, ids[k].index);
    const Reduction r = reduction(down.ul[k].dim(1), g);
    auto h = layers::conv(b, name + ".conv", down.ul[k], r.f, Pad2d{0, r.pad, 0, r.pad});
    out.push_back(layers::linear(b, name + ".fc", flatten(h)));
  }
  return out;
}

template <class T>
Var<T> posterior_sample(const ModelConfig& cfg, const Var<T>& logits, Rng& rng, double tau) {
  if (cfg.prior == PriorKind::gaussian) {
    const std::size_t n = logits.dim(1) / 2;
    auto eps = logits.tape().constant(normal_tensor<T>(Shape{logits.dim(0), n}, 1.0, rng));
    return add(slice(logits, 1, 0, n), mul(exp(slice(logits, 1, n, n)), eps));
  }
  auto rho = uniform_rho<T>(logits.shape(), rng);
  if (tau == 0.0) return logits.tape().constant(sample_discrete(logits.value(), rho));
  return sample_zeta(logits, rho, tau);
}

template <class T>
Posterior<T> posterior_forward(const Binder<T>& b, const ModelConfig& cfg, const Tensor<std::uint8_t>& x, Rng& rng,
                               double tau) {
  Posterior<T> p;
  auto xin = model_input(b.tape(), cfg, x);
  if (cfg.z1 > 0) {
    p.logits.z1 = encode_z1(b, cfg, xin);
    p.values.z1 = posterior_sample(cfg, p.logits.z1, rng, tau);
  }
  if (cfg.z2 > 0) {
    p.logits.z2 = encode_z2(b, cfg, xin);
    p.values.z2 = posterior_sample(cfg, p.logits.z2, rng, tau);
  }
  auto down = decoder_down(b, cfg, xin, p.values);
  if (cfg.z3) {
    p.logits.z3 = encode_z3(b, cfg, down);
    for (const auto& l : p.logits.z3) p.values.z3.push_back(posterior_sample(cfg, l, rng, tau));
  }
  p.head = decoder_up(b, cfg, down, p.values);
  return p;
}

// ---------------------------------------------------------------------------
// Generation.

template <class T>
Generation<T> generate(const ParamSet<T>& params, const ModelConfig& cfg, const LatentValues<T>& z, std::size_t batch,
                       Rng& rng) {
  const std::size_t h = cfg.height, w = cfg.width, c = cfg.channels(), pp = cfg.head.params_per_pixel();
  Generation<T> out{Tensor<std::uint8_t>(Shape{batch, h, w, c}), Tensor<T>(Shape{batch, h, w, pp})};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      Tape<T> tape;
      Binder<T> b(tape, params, false);
      const auto head = decode_teacher_forced(b, cfg, model_input(tape, cfg, out.images), constant_latents(tape, z));
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t pix = (i * h + r) * w + col;
        const T* p = head.value().data() + pix * pp;
        std::copy(p, p + pp, out.params.data() + pix * pp);
        sample_pixel(cfg.head, p, rng, out.images.data() + pix * c);
      }
    }
  }
  return out;
}

#define PVXL_INSTANTIATE_MODEL(T)                                                                                    \
  template LatentVars<T> constant_latents<T>(Tape<T>&, const LatentValues<T>&);                                     \
  template LatentValues<T> latent_values<T>(const LatentVars<T>&);                                                  \
  template std::array<Var<T>, 2> rbm_sides<T>(const ModelConfig&, const LatentVars<T>&);                            \
  template LatentValues<T> latents_from_states<T>(const ModelConfig&, std::span<const RbmState>);                   \
  template Var<T> model_input<T>(Tape<T>&, const ModelConfig&, const Tensor<std::uint8_t>&);                        \
  template Var<T> gated_resnet<T>(const Binder<T>&, const std::string&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                  ShiftKind);                                                                        \
  template DownPass<T> decoder_down<T>(const Binder<T>&, const ModelConfig&, const Var<T>&, const LatentVars<T>&);  \
  template Var<T> decoder_up<T>(const Binder<T>&, const ModelConfig&, const DownPass<T>&, const LatentVars<T>&);    \
  template Var<T> decode_teacher_forced<T>(const Binder<T>&, const ModelConfig&, const Var<T>&,                     \
                                           const LatentVars<T>&);                                                    \
  template Var<T> encode_z1<T>(const Binder<T>&, const ModelConfig&, const Var<T>&);                                \
  template Var<T> encode_z2<T>(const Binder<T>&, const ModelConfig&, const Var<T>&);                                \
  template std::vector<Var<T>> encode_z3<T>(const Binder<T>&, const ModelConfig&, const DownPass<T>&);              \
  template Var<T> posterior_sample<T>(const ModelConfig&, const Var<T>&, Rng&, double);                             \
  template Posterior<T> posterior_forward<T>(const Binder<T>&, const ModelConfig&, const Tensor<std::uint8_t>&,     \
                                             Rng&, double);                                                          \
  template Generation<T> generate<T>(const ParamSet<T>&, const ModelConfig&, const LatentValues<T>&, std::size_t,   \
                                     Rng&);

PVXL_INSTANTIATE_MODEL(float)
PVXL_INSTANTIATE_MODEL(double)

}  // namespace pvxl
