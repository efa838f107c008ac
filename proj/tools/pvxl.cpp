// pvxl: train, evaluate and sample the model from the command line.
//
// Exit codes: 0 success, 1 validation failure (bad config or values, a
// failed check, aborted training), 2 I/O error or bad usage.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pvxl/checks.hpp"
#include "pvxl/config.hpp"
#include "pvxl/io.hpp"
#include "pvxl/sampling.hpp"
#include "pvxl/trainer.hpp"

using namespace pvxl;

namespace {

constexpr int kOk = 0, kFailed = 1, kIo = 2;

class Failed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PVXL_SEED overrides the stored seed; an explicit --seed overrides both.
std::uint64_t pick_seed(std::uint64_t stored, const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("PVXL_SEED"); env && *env) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
      v = std::stoull(env, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != std::string(env).size()) throw std::invalid_argument(std::string("PVXL_SEED is not an integer: ") + env);
    return v;
  }
  return stored;
}

const LabeledImages& split_of(const Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  return s.valid;
}

LabeledImages first_n(const LabeledImages& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return d.subset(idx);
}

std::vector<Tensor<double>> row_sets(const Tensor<std::uint8_t>& images, std::size_t per_row, bool binary) {
  const auto px = pixel_space(images, binary);
  const std::size_t d = px.dim(1), rows = images.dim(0) / per_row;
  std::vector<Tensor<double>> out;
  for (std::size_t r = 0; r < rows; ++r) {
    Tensor<double> t(Shape{per_row, d});
    std::copy_n(px.data() + r * per_row * d, per_row * d, t.data());
    out.push_back(std::move(t));
  }
  return out;
}

Tensor<std::uint8_t> reorder_rows(const Tensor<std::uint8_t>& images, std::size_t per_row,
                                  const std::vector<std::size_t>& order) {
  Tensor<std::uint8_t> out(images.shape());
  const std::size_t block = images.size() / images.dim(0) * per_row;
  for (std::size_t i = 0; i < order.size(); ++i)
    std::copy_n(images.data() + order[i] * block, block, out.data() + i * block);
  return out;
}

void write_grid(const std::string& prefix, const Tensor<std::uint8_t>& images, std::size_t rows, std::size_t cols) {
  const auto grid = image_grid(images, rows, cols);
  write_png(prefix + ".png", grid);
  write_pnm(prefix + (grid.dim(2) == 1 ? ".pgm" : ".ppm"), grid);
}

template <class T>
Tensor<std::uint8_t> sample_images(const TrainedModel& m, std::size_t latents, std::size_t per, int gibbs,
                                   std::uint64_t seed) {
  const auto& mc = m.manifest.config.model;
  if constexpr (std::is_same_v<T, float>) {
    return generate_from_prior(m.f32, mc, latents, per, gibbs, seed);
  } else {
    return generate_from_prior(m.f64, mc, latents, per, gibbs, seed);
  }
}

int run_train(const std::string& config, const std::string& out, std::optional<int> epochs) {
  auto cfg = config_load(config);
  cfg.seed = pick_seed(cfg.seed, std::nullopt);
  if (epochs) cfg.epochs = *epochs;
  cfg.validate();
  const auto splits = load_splits(cfg);
  std::cout << csv_table(metric_header(), {}) << std::flush;
  TrainOptions opt;
  opt.out_dir = out;
  opt.on_epoch = [](const MetricRow& r) {
    std::string line;
    for (const auto& c : metric_cells(r)) line += (line.empty() ? "" : ",") + c;
    std::cout << line << "\n" << std::flush;
  };
  train(splits, cfg, opt);
  std::cerr << "wrote " << out << "/final.pvxl\n";
  return kOk;
}

int run_eval(const std::string& checkpoint, const EvalOptions& base, const std::string& split, std::size_t n,
             std::optional<std::uint64_t> seed) {
  const auto m = load_trained(checkpoint);
  EvalOptions opt = base;
  opt.seed = pick_seed(m.manifest.seed, seed);
  const auto set = first_n(split_of(load_splits(m.manifest.config), split), n);
  const auto r = evaluate(m, set, opt);
  std::cout << csv_table({"split", "images", "k", "log_z", "log_z_method", "ll_nats", "bpd", "elbo_nats", "kl_nats"},
                         {{split, std::to_string(r.images), std::to_string(r.k), csv_number(r.log_z), r.log_z_method,
                           csv_number(r.ll), csv_number(r.bpd), csv_number(r.elbo), csv_number(r.kl)}});
  return kOk;
}

int run_sample(const std::string& checkpoint, std::size_t latents, std::size_t per, int gibbs,
               const std::string& out, std::optional<std::uint64_t> seed) {
  const auto m = load_trained(checkpoint);
  const auto s = pick_seed(m.manifest.seed, seed);
  const auto images = m.manifest.config.precision == "double" ? sample_images<double>(m, latents, per, gibbs, s)
                                                              : sample_images<float>(m, latents, per, gibbs, s);
  write_grid(out, images, latents, per);
  const bool binary = m.manifest.config.model.head.kind == HeadKind::bernoulli;
  if (per >= 2) {
    const auto rows = row_sets(images, per, binary);
    const auto order = rank_rows(rows);
    std::vector<std::vector<std::string>> table;
    for (std::size_t i = 0; i < order.size(); ++i)
      table.push_back({std::to_string(i), std::to_string(order[i]), csv_number(mutual_energy_distance(rows[order[i]]))});
    write_text(out + "_ranking.csv", csv_table({"rank", "latent", "mutual_energy_distance"}, table));
    write_grid(out + "_ranked", reorder_rows(images, per, order), latents, per);
  }
  std::cerr << "wrote " << out << ".png\n";
  return kOk;
}

int run_reconstruct(const std::string& checkpoint, std::size_t n, std::size_t per, const std::string& split,
                    const std::string& out, std::optional<std::uint64_t> seed) {
  const auto m = load_trained(checkpoint);
  const auto& cfg = m.manifest.config;
  const auto s = pick_seed(m.manifest.seed, seed);
  const auto src = first_n(split_of(load_splits(cfg), split), n).images;
  const auto rec = cfg.precision == "double" ? reconstruct(m.f64, cfg.model, src, per, s)
                                             : reconstruct(m.f32, cfg.model, src, per, s);
  const std::size_t rows = src.dim(0), px = src.size() / rows;
  // Each row: the source image followed by its reconstructions.
  Shape shape = src.shape();
  shape[0] = rows * (per + 1);
  Tensor<std::uint8_t> grid(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(src.data() + r * px, px, grid.data() + r * (per + 1) * px);
    std::copy_n(rec.data() + r * per * px, per * px, grid.data() + (r * (per + 1) + 1) * px);
  }
  write_grid(out, grid, rows, per + 1);

  const bool binary = cfg.model.head.kind == HeadKind::bernoulli;
  const auto rows_px = row_sets(rec, per, binary);
  const auto src_px = pixel_space(src, binary);
  std::vector<std::vector<std::string>> table;
  for (std::size_t r = 0; r < rows; ++r) {
    Tensor<double> ref(Shape{1, src_px.dim(1)});
    std::copy_n(src_px.data() + r * src_px.dim(1), src_px.dim(1), ref.data());
    table.push_back({std::to_string(r), csv_number(energy_distance(rows_px[r], ref))});
  }
  write_text(out + "_distance.csv", csv_table({"image", "energy_distance_to_source"}, table));
  std::cerr << "wrote " << out << ".png\n";
  return kOk;
}

int run_check_ais(std::size_t m, std::size_t k, const std::string& steps_csv, int updates, int chains,
                  std::uint64_t seed, double tolerance) {
  if (m + k > kMaxEnumerationUnits)
    throw std::invalid_argument("check-ais: m + k must be at most " + std::to_string(kMaxEnumerationUnits));
  std::vector<int> steps;
  std::stringstream ss(steps_csv);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    const int v = std::stoi(item, &used);
    if (used != item.size() || v < 1) throw std::invalid_argument("check-ais: bad step count '" + item + "'");
    steps.push_back(v);
  }
  if (steps.empty()) throw std::invalid_argument("check-ais: no step counts");
  const auto p = random_rbm(m, k, -1, 1, seed);
  const auto rows = check_ais(p, steps, updates, chains, seed);
  std::vector<std::vector<std::string>> table;
  for (const auto& r : rows)
    table.push_back({std::to_string(r.steps), csv_number(r.estimate), csv_number(r.exact), csv_number(r.error),
                     csv_number(r.ess), csv_number(r.seconds)});
  std::cout << csv_table({"steps", "estimate", "exact", "abs_error", "ess", "seconds"}, table);
  if (rows.back().error >= tolerance)
    throw Failed("check-ais: |error| " + csv_number(rows.back().error) + " >= " + csv_number(tolerance));
  return kOk;
}

int run_gradcheck(std::uint64_t seed) {
  const auto results = gradient_suite(seed);
  std::vector<std::vector<std::string>> table;
  int failed = 0;
  for (const auto& r : results) {
    table.push_back({r.name, csv_number(r.error), csv_number(r.tolerance), r.passed() ? "pass" : "FAIL"});
    failed += !r.passed();
  }
  std::cout << csv_table({"check", "max_rel_error", "tolerance", "status"}, table);
  if (failed) throw Failed("gradcheck: " + std::to_string(failed) + " check(s) failed");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-latent VAE with an autoregressive decoder and an RBM prior", "pvxl"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  std::string config, out = "run", checkpoint, split = "test", steps = "1000,10000";
  std::optional<int> epochs;
  EvalOptions eval;
  std::size_t n_images = 0, latents = 128, per_latent = 8, per_image = 8, m = 8, k = 8;
  int gibbs = 50000, updates = 50, chains = 5000;
  double tolerance = 0.05;
  std::uint64_t check_seed = 1;

  auto* train_cmd = app.add_subcommand("train", "Train from a JSON config");
  train_cmd->add_option("--config", config, "Config file")->required();
  train_cmd->add_option("--out", out, "Output directory")->capture_default_str();
  train_cmd->add_option("--epochs", epochs, "Override the configured epoch count");

  auto* eval_cmd = app.add_subcommand("eval", "Importance-weighted likelihood, bpd and KL as CSV");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--k", eval.k, "Importance samples per image")->capture_default_str();
  eval_cmd->add_option("--split", split, "test (held-out split) or train")
      ->check(CLI::IsMember({"test", "valid", "train"}))
      ->capture_default_str();
  eval_cmd->add_option("--images", n_images, "Evaluate the first N images (0: all)");
  eval_cmd->add_option("--chunk", eval.chunk, "Samples per decoder pass")->capture_default_str();
  eval_cmd->add_option("--ais-steps", eval.ais_steps)->capture_default_str();
  eval_cmd->add_option("--ais-updates", eval.ais_updates)->capture_default_str();
  eval_cmd->add_option("--ais-chains", eval.ais_chains)->capture_default_str();
  eval_cmd->add_option("--seed", seed);

  auto* sample_cmd = app.add_subcommand("sample", "Decode prior samples into an image grid");
  sample_cmd->add_option("--checkpoint", checkpoint)->required();
  sample_cmd->add_option("--latents", latents)->capture_default_str();
  sample_cmd->add_option("--per-latent", per_latent)->capture_default_str();
  sample_cmd->add_option("--gibbs", gibbs, "Block Gibbs alternations per latent chain")->capture_default_str();
  sample_cmd->add_option("--out", out, "Output prefix")->capture_default_str();
  sample_cmd->add_option("--seed", seed);

  auto* rec_cmd = app.add_subcommand("reconstruct", "Decode posterior samples of held-out images");
  rec_cmd->add_option("--checkpoint", checkpoint)->required();
  rec_cmd->add_option("--images", n_images, "Number of source images")->capture_default_str();
  rec_cmd->add_option("--per-image", per_image)->capture_default_str();
  rec_cmd->add_option("--split", split)->check(CLI::IsMember({"test", "valid", "train"}))->capture_default_str();
  rec_cmd->add_option("--out", out, "Output prefix")->capture_default_str();
  rec_cmd->add_option("--seed", seed);

  auto* ais_cmd = app.add_subcommand("check-ais", "AIS log Z against enumeration on a random RBM");
  ais_cmd->add_option("--m", m)->capture_default_str();
  ais_cmd->add_option("--k", k)->capture_default_str();
  ais_cmd->add_option("--steps", steps, "Comma-separated ladder lengths")->capture_default_str();
  ais_cmd->add_option("--updates", updates)->capture_default_str();
  ais_cmd->add_option("--chains", chains)->capture_default_str();
  ais_cmd->add_option("--tolerance", tolerance, "Allowed |error| of the last ladder")->capture_default_str();
  ais_cmd->add_option("--seed", check_seed)->capture_default_str();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", check_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << "\n" << app.help();
    return kIo;
  }

  try {
    if (*train_cmd) return run_train(config, out, epochs);
    if (*eval_cmd) return run_eval(checkpoint, eval, split, n_images, seed);
    if (*sample_cmd) return run_sample(checkpoint, latents, per_latent, gibbs, out, seed);
    if (*rec_cmd) return run_reconstruct(checkpoint, n_images ? n_images : 8, per_image, split, out, seed);
    if (*ais_cmd) return run_check_ais(m, k, steps, updates, chains, check_seed, tolerance);
    if (*grad_cmd) return run_gradcheck(check_seed);
  } catch (const IoError& e) {
    std::cerr << "pvxl: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "pvxl: " << e.what() << "\n";
    return kIo;
  } catch (const TrainingAborted& e) {
    std::cerr << "pvxl: " << e.what() << "\n";
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "pvxl: " << e.what() << "\n";
    return kFailed;
  }
  return kFailed;
}
