#include "pvxl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "pvxl/config.hpp"
#include "pvxl/io.hpp"

#ifndef PVXL_VERSION
#define PVXL_VERSION "0.0.0"
#endif

namespace pvxl {

namespace {

namespace fs = std::filesystem;

bool is_toy(const std::string& s) { return s == "bars" || s == "rectangles" || s == "sprites"; }

bool two_level(const Tensor<std::uint8_t>& x) {
  for (auto v : x.values())
    if (v != 0 && v != 255) return false;
  return true;
}

Tensor<std::uint8_t> to_bits(const Tensor<std::uint8_t>& x) {
  Tensor<std::uint8_t> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] ? 1 : 0;
  return out;
}

LabeledImages first(const LabeledImages& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return d.subset(idx);
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

// Systematic resampling by importance weight.
std::vector<RbmState> resample(const std::vector<RbmState>& states, std::span<const double> log_w, double u) {
  const std::size_t n = states.size();
  const double top = *std::max_element(log_w.begin(), log_w.end());
  std::vector<double> cum(n);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) cum[i] = s += std::exp(log_w[i] - top);
  std::vector<RbmState> out;
  out.reserve(n);
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double target = (static_cast<double>(i) + u) / static_cast<double>(n) * s;
    while (j + 1 < n && cum[j] < target) ++j;
    out.push_back(states[j]);
  }
  return out;
}

template <class T>
Checkpoint make_checkpoint(const ParamSet<T>& params, const RunManifest& m, double log_z, int epoch) {
  Checkpoint ck;
  ck.meta = {{"manifest", manifest_to_json(m)}, {"log_z_est", log_z}, {"epoch", epoch}};
  if constexpr (std::is_same_v<T, float>) {
    ck.f32 = params;
  } else {
    ck.f64 = params;
  }
  return ck;
}

template <class T>
ElboBreakdown evaluate_set(const ParamSet<T>& params, const ModelConfig& mc, const LabeledImages& set,
                           std::size_t batch, const LogPartition* log_z, std::uint64_t seed) {
  ElboBreakdown all;
  Rng rng(seed);
  for (std::size_t start = 0; start < set.size(); start += batch) {
    std::vector<std::size_t> idx(std::min(batch, set.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const auto xb = set.subset(idx).images;
    Tape<T> tape;
    Binder<T> b(tape, params, false);
    ElboOptions opt;
    opt.tau = 0;
    opt.beta = 1;
    opt.log_z = log_z;
    const auto e = relaxed_elbo(b, mc, xb, rng, opt);
    all.recon.insert(all.recon.end(), e.terms.recon.begin(), e.terms.recon.end());
    all.kl.insert(all.kl.end(), e.terms.kl.begin(), e.terms.kl.end());
    all.total.insert(all.total.end(), e.terms.total.begin(), e.terms.total.end());
  }
  return all;
}

template <class T>
bool all_finite(const ParamSet<T>& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    for (T v : p.at(i).values())
      if (!std::isfinite(v)) return false;
  return true;
}

template <class T>
TrainedModel train_impl(const Splits& data, const TrainConfig& cfg, const TrainOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const ModelConfig& mc = cfg.model;
  const std::uint64_t seed = cfg.seed;
  const bool rbm = mc.has_latents() && mc.prior == PriorKind::rbm;

  RunManifest manifest;
  manifest.config = cfg;
  manifest.seed = seed;
  manifest.version = version_string();
  manifest.dataset_fingerprint = fingerprint(data.train);

  const bool write = !options.out_dir.empty();
  if (write) fs::create_directories(options.out_dir);
  auto out_path = [&](const std::string& name) { return (fs::path(options.out_dir) / name).string(); };

  ParamSet<T> params = init_model(mc, derive_seed(seed, 1)).template cast<T>();
  AdamState<T> adam = adam_init(params);
  Rng shuffle_rng(derive_seed(seed, 2));
  Rng noise_rng(derive_seed(seed, 3));
  Rng binarize_rng(derive_seed(seed, 4));
  Rng resample_rng(derive_seed(seed, 5));

  LogPartition log_z;
  double ess = 0;
  std::vector<RbmState> chains;
  auto refresh = [&](int epoch) {
    const RbmParams p = rbm_params(params);
    const auto schedule = make_schedule(cfg.ais.steps, cfg.ais.updates, cfg.ais.chains, cfg.ais.spacing);
    auto s = ais_samples(p, schedule, derive_seed(derive_seed(seed, 6), static_cast<std::uint64_t>(epoch)));
    log_z.value = s.result.log_z_estimate;
    ess = s.result.ess;
    chains = resample(s.states, s.result.log_weights, resample_rng.uniform());
  };
  if (rbm) refresh(0);

  const std::size_t n_train = data.train.size();
  const std::size_t steps_per_epoch = (n_train + cfg.batch - 1) / cfg.batch;
  const long horizon = std::lround(cfg.kl_anneal_epochs * static_cast<double>(steps_per_epoch));
  const std::uint64_t chain_seed = derive_seed(seed, 7);
  LabeledImages train_set = data.train;
  long step = 0;
  double beta = 0, tau = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (data.train_intensity) train_set.images = binarize(*data.train_intensity, binarize_rng);
    const auto order = permutation(n_train, shuffle_rng);
    double loss_sum = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const std::size_t lo = s * cfg.batch, hi = std::min(n_train, lo + cfg.batch);
      const auto xb = train_set.subset(std::span(order).subspan(lo, hi - lo)).images;
      beta = kl_anneal_beta(step, horizon);
      tau = tau_at(cfg.tau, step);

      RbmParams p;
      if (rbm) {
        p = rbm_params(params);
        BlockGibbs gibbs(p);
        auto c = gibbs.chains_at(chains, derive_seed(chain_seed, static_cast<std::uint64_t>(step)));
        gibbs.run(c, cfg.ais.gibbs_per_step);
        chains = gibbs.states(c);
        log_z.moments = grad_log_z(p, chains);
      }

      Tape<T> tape;
      Binder<T> b(tape, params);
      ElboOptions opt;
      opt.tau = tau;
      opt.beta = beta;
      opt.path_derivative = cfg.path_derivative;
      opt.log_z = rbm ? &log_z : nullptr;
      auto elbo = relaxed_elbo(b, mc, xb, noise_rng, opt);
      double loss = elbo.loss.item();
      if (options.poison_step && options.poison_step->first == epoch && options.poison_step->second == s)
        loss = std::numeric_limits<double>::quiet_NaN();

      ParamSet<T> grads;
      bool finite = std::isfinite(loss);
      if (finite) {
        tape.backward(elbo.loss);
        grads = b.grads();
        finite = all_finite(grads);
      }
      if (!finite) {
        std::string ck;
        if (write) {
          ck = out_path("last_good.pvxl");
          save_checkpoint(ck, make_checkpoint(params, manifest, log_z.value, epoch));
          write_text(out_path("manifest.json"), manifest_to_json(manifest).dump(2) + "\n");
        }
        throw TrainingAborted("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                  std::to_string(s + 1) + (ck.empty() ? "" : "; last finite parameters in " + ck),
                              ck);
      }
      loss_sum += loss;
      optimizer_step(params, grads, adam, cfg.adam, cfg.adam.lr_at(epoch));
    }

    const bool last = epoch + 1 == cfg.epochs;
    if (rbm && ((epoch + 1) % cfg.ais.refresh_every == 0 || last)) refresh(epoch + 1);

    const auto v = evaluate_set(params, mc, data.valid, cfg.batch, rbm ? &log_z : nullptr,
                                derive_seed(derive_seed(seed, 8), static_cast<std::uint64_t>(epoch)));
    MetricRow row;
    row.epoch = epoch + 1;
    row.elbo = v.mean_total();
    row.recon = v.mean_recon();
    row.kl = v.mean_kl();
    row.beta = beta;
    row.tau = tau;
    row.log_z_est = log_z.value;
    row.ess = ess;
    row.wall_time = std::chrono::duration<double>(clock::now() - t0).count();
    row.train_loss = steps_per_epoch ? loss_sum / static_cast<double>(steps_per_epoch) : 0.0;
    manifest.history.push_back(row);

    if (write) {
      if (last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)) {
        const std::string name = last ? "final.pvxl" : "epoch_" + std::to_string(epoch + 1) + ".pvxl";
        manifest.checkpoints.push_back(name);
        save_checkpoint(out_path(name), make_checkpoint(params, manifest, log_z.value, epoch + 1));
      }
      std::vector<std::vector<std::string>> rows;
      for (const auto& r : manifest.history) rows.push_back(metric_cells(r));
      write_text(out_path("metrics.csv"), csv_table(metric_header(), rows));
      write_text(out_path("manifest.json"), manifest_to_json(manifest).dump(2) + "\n");
    }
    if (options.on_epoch) options.on_epoch(row);
  }

  TrainedModel out;
  out.manifest = std::move(manifest);
  out.log_z_est = log_z.value;
  if constexpr (std::is_same_v<T, float>) {
    out.f32 = params;
    out.f64 = params.template cast<double>();
  } else {
    out.f64 = params;
    out.f32 = params.template cast<float>();
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  tau.validate();
  if (batch == 0) throw std::invalid_argument("batch must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(kl_anneal_epochs >= 0)) throw std::invalid_argument("kl_anneal_epochs must be non-negative");
  if (!(adam.lr > 0)) throw std::invalid_argument("adam.lr must be positive");
  if (ais.steps < 1 || ais.updates < 1 || ais.chains < 1)
    throw std::invalid_argument("ais.steps, ais.updates and ais.chains must be positive");
  if (ais.refresh_every < 1) throw std::invalid_argument("ais.refresh_every must be positive");
  if (ais.gibbs_per_step < 0) throw std::invalid_argument("ais.gibbs_per_step must be non-negative");
  if (precision != "float" && precision != "double")
    throw std::invalid_argument("precision must be 'float' or 'double', got '" + precision + "'");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
  if (data.binarization != "static" && data.binarization != "dynamic")
    throw std::invalid_argument("data.binarization must be 'static' or 'dynamic'");
  if (data.n_valid == 0) throw std::invalid_argument("data.n_valid must be positive");
  if (is_toy(data.source)) {
    if (data.size != model.height || data.size != model.width)
      throw std::invalid_argument("data.size must equal model.height and model.width for toy sets");
    if (data.n_train == 0) throw std::invalid_argument("data.n_train must be positive for toy sets");
  } else if (data.source == "idx") {
    if (data.train_images.empty() || data.test_images.empty())
      throw std::invalid_argument("data.train_images and data.test_images are required for idx data");
  } else {
    throw std::invalid_argument("data.source must be bars, rectangles, sprites or idx, got '" + data.source + "'");
  }
  const bool bytes_head = model.head.kind == HeadKind::dlm;
  if (bytes_head != data.keep_bytes)
    throw std::invalid_argument(bytes_head ? "a dlm head needs data.keep_bytes" : "a bernoulli head needs binary data");
  if (data.keep_bytes && data.source != "idx") throw std::invalid_argument("toy sets are binary; keep_bytes needs idx data");
}

std::vector<std::string> metric_header() {
  return {"epoch", "elbo", "recon", "kl", "beta", "tau", "log_z_est", "ess", "wall_time", "train_loss"};
}

std::vector<std::string> metric_cells(const MetricRow& r) {
  return {std::to_string(r.epoch), csv_number(r.elbo),      csv_number(r.recon), csv_number(r.kl),
          csv_number(r.beta),      csv_number(r.tau),       csv_number(r.log_z_est),
          csv_number(r.ess),       csv_number(r.wall_time), csv_number(r.train_loss)};
}

Splits load_splits(const TrainConfig& cfg) {
  cfg.validate();
  const auto& d = cfg.data;
  Splits s;
  if (is_toy(d.source)) {
    Rng rng(derive_seed(cfg.seed, 100));
    const auto all = synth_toy(d.n_train + d.n_valid, d.size, parse_toy_kind(d.source), rng);
    std::vector<std::size_t> tr(d.n_train), va(d.n_valid);
    std::iota(tr.begin(), tr.end(), 0);
    std::iota(va.begin(), va.end(), d.n_train);
    s.train = all.subset(tr);
    s.valid = all.subset(va);
    return s;
  }
  s.train = first(load_idx_images(d.train_images, d.train_labels), d.n_train);
  s.valid = first(load_idx_images(d.test_images, d.test_labels), d.n_valid);
  const auto& shape = s.train.images.shape();
  if (shape[1] != cfg.model.height || shape[2] != cfg.model.width || shape[3] != cfg.model.channels())
    throw std::invalid_argument("images do not match the model's height, width and channels");
  if (d.keep_bytes) return s;
  Rng rng(derive_seed(cfg.seed, 101));
  for (LabeledImages* set : {&s.train, &s.valid}) {
    if (is_binary(set->images)) continue;
    if (two_level(set->images)) {
      set->images = to_bits(set->images);
      continue;
    }
    if (set == &s.train && d.binarization == "dynamic") s.train_intensity = intensities(set->images);
    set->images = binarize(intensities(set->images), rng);
  }
  return s;
}

TrainedModel train(const Splits& data, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (data.train.size() == 0 || data.valid.size() == 0) throw std::invalid_argument("train: empty split");
  if (cfg.precision == "double") return train_impl<double>(data, cfg, options);
  return train_impl<float>(data, cfg, options);
}

namespace {

template <class T>
EvalReport evaluate_impl(const ParamSet<T>& params, const ModelConfig& mc, const LabeledImages& set,
                         const EvalOptions& opt) {
  EvalReport r;
  r.images = set.size();
  r.k = opt.k;
  const bool rbm = mc.has_latents() && mc.prior == PriorKind::rbm;
  LogPartition lz;
  r.log_z_method = "none";
  if (rbm) {
    const RbmParams p = rbm_params(params);
    if (p.m + p.k <= kMaxEnumerationUnits) {
      lz = exact_log_partition(p);
      r.log_z_method = "exact";
    } else {
      lz.value = ais_log_z(p, make_schedule(opt.ais_steps, opt.ais_updates, opt.ais_chains, Spacing::geometric_tail),
                           derive_seed(opt.seed, 1))
                     .log_z_estimate;
      r.log_z_method = "ais";
    }
  }
  r.log_z = lz.value;
  Rng rng(derive_seed(opt.seed, 2));
  r.per_image_ll = iwae_loglik(params, mc, set.images, lz.value, opt.k, rng, opt.chunk);
  for (double v : r.per_image_ll) r.ll += v;
  r.ll /= static_cast<double>(r.images);
  r.bpd = bits_per_dimension(r.ll, mc.height * mc.width * mc.channels());
  const auto b = evaluate_set(params, mc, set, 64, rbm ? &lz : nullptr, derive_seed(opt.seed, 3));
  r.elbo = b.mean_total();
  r.kl = b.mean_kl();
  return r;
}

}  // namespace

EvalReport evaluate(const TrainedModel& model, const LabeledImages& set, const EvalOptions& options) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty image set");
  if (options.k == 0) throw std::invalid_argument("evaluate: k must be positive");
  const auto& cfg = model.manifest.config;
  if (cfg.precision == "double") return evaluate_impl(model.f64, cfg.model, set, options);
  return evaluate_impl(model.f32, cfg.model, set, options);
}

TrainedModel load_trained(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  TrainedModel m;
  try {
    m.manifest = manifest_from_json(ck.meta.at("manifest"));
    m.log_z_est = ck.meta.at("log_z_est").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": checkpoint metadata: " + e.what());
  }
  if (ck.f32.size()) {
    m.f32 = ck.f32;
    m.f64 = ck.f32.cast<double>();
  } else {
    m.f64 = ck.f64;
    m.f32 = ck.f64.cast<float>();
  }
  const auto expected = init_model(m.manifest.config.model, 0);
  if (expected.names() != m.f64.names()) throw IoError(path + ": parameters do not match the stored model config");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected.at(i).shape() != m.f64.at(i).shape())
      throw IoError(path + ": parameter '" + expected.names()[i] + "' has the wrong shape");
  return m;
}

std::string version_string() { return std::string("pvxl ") + PVXL_VERSION; }

}  // namespace pvxl
