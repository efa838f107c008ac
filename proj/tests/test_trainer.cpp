#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "pvxl/config.hpp"
#include "pvxl/io.hpp"
#include "pvxl/trainer.hpp"

using namespace pvxl;

namespace {

TrainConfig small(bool latents) {
  TrainConfig c;
  c.model.height = c.model.width = 6;
  c.model.resnets = 1;
  c.model.filters = 4;
  c.model.latent_filters = 4;
  c.model.z1 = latents ? 4 : 0;
  c.data.size = 6;
  c.data.n_train = 20;
  c.data.n_valid = 8;
  c.batch = 8;
  c.epochs = 2;
  c.kl_anneal_epochs = 1;
  c.ais.steps = 20;
  c.ais.chains = 16;
  c.precision = "double";
  c.seed = 17;
  return c;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

bool same_history(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i], y = b[i];
    x.wall_time = y.wall_time = 0;
    if (metric_cells(x) != metric_cells(y)) return false;
  }
  return true;
}

// Plain autoregressive maximum likelihood with the same seeds and batches.
ParamSet<double> decoder_only_reference(const Splits& s, const TrainConfig& c) {
  auto params = init_model(c.model, derive_seed(c.seed, 1));
  auto adam = adam_init(params);
  Rng shuffle(derive_seed(c.seed, 2));
  const std::size_t n = s.train.size(), steps = (n + c.batch - 1) / c.batch;
  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::size_t(shuffle.uniform() * double(i))]);
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t lo = k * c.batch, hi = std::min(n, lo + c.batch);
      const auto x = s.train.subset(std::span(order).subspan(lo, hi - lo)).images;
      Tape<double> tape;
      Binder<double> b(tape, params);
      const auto head = decode_teacher_forced(b, c.model, model_input(tape, c.model, x), LatentVars<double>{});
      const auto loss = neg(mean(pixel_loglik(c.model.head, head, x)));
      tape.backward(loss);
      optimizer_step(params, b.grads(), adam, c.adam, c.adam.lr_at(epoch));
    }
  }
  return params;
}

}  // namespace

TEST_CASE("splits") {
  const auto c = small(true);
  const auto a = load_splits(c), b = load_splits(c);
  CHECK(a.train.size() == 20);
  CHECK(a.valid.size() == 8);
  CHECK(a.train.images == b.train.images);
  CHECK(fingerprint(a.train) != fingerprint(a.valid));
  CHECK_FALSE(a.train_intensity);
}

TEST_CASE("idx splits with static and dynamic binarization") {
  const auto dir = temp_dir("pvxl_idx_splits");
  std::filesystem::create_directories(dir);
  std::vector<std::uint8_t> bytes = {0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 6, 0, 0, 0, 6};
  for (int i = 0; i < 4 * 36; ++i) bytes.push_back(static_cast<std::uint8_t>(i % 3 == 0 ? 255 : 100));
  write_file(dir + "/img.idx", bytes);
  auto c = small(true);
  c.data.source = "idx";
  c.data.train_images = c.data.test_images = dir + "/img.idx";
  c.data.n_train = 3;
  c.data.n_valid = 2;
  auto s = load_splits(c);
  CHECK(s.train.size() == 3);
  CHECK(s.valid.size() == 2);
  CHECK(is_binary(s.train.images));
  CHECK_FALSE(s.train_intensity);
  for (std::size_t i = 0; i < 36; i += 3) CHECK(s.train.images[i] == 1);

  c.data.binarization = "dynamic";
  s = load_splits(c);
  REQUIRE(s.train_intensity);
  CHECK((*s.train_intensity)[0] == 1.0);
  c.epochs = 1;
  CHECK(train(s, c).manifest.history.size() == 1);
}

TEST_CASE("fixed seed reproduces the metric history") {
  const auto c = small(true);
  const auto s = load_splits(c);
  const auto a = train(s, c);
  const auto b = train(s, c);
  CHECK(same_history(a.manifest.history, b.manifest.history));
  CHECK(a.f64 == b.f64);
  CHECK(a.log_z_est == b.log_z_est);
  for (const auto& r : a.manifest.history) {
    CHECK(std::isfinite(r.elbo));
    CHECK(r.elbo == doctest::Approx(r.recon - r.kl));
    CHECK(r.ess > 0);
  }
  CHECK(a.manifest.history.back().beta == 1.0);

  auto other = c;
  other.seed = 18;
  CHECK_FALSE(same_history(train(load_splits(other), other).manifest.history, a.manifest.history));
}

TEST_CASE("outputs on disk") {
  auto c = small(true);
  c.checkpoint_every = 1;
  const auto dir = temp_dir("pvxl_train_out");
  const auto s = load_splits(c);
  const auto t = train(s, c, {dir, {}, {}});
  CHECK(t.manifest.checkpoints == std::vector<std::string>{"epoch_1.pvxl", "final.pvxl"});

  const auto csv = read_file(dir + "/metrics.csv");
  const std::string text(csv.begin(), csv.end());
  CHECK(text.rfind("epoch,elbo,recon,kl,beta,tau,log_z_est,ess,wall_time,train_loss\n1,", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);

  const auto loaded = load_trained(dir + "/final.pvxl");
  CHECK(loaded.f64 == t.f64);
  CHECK(loaded.log_z_est == t.log_z_est);
  CHECK(same_history(loaded.manifest.history, t.manifest.history));
  CHECK(config_to_json(loaded.manifest.config) == config_to_json(c));

  // Re-running from the stored manifest reproduces the history.
  const auto again = train(load_splits(loaded.manifest.config), loaded.manifest.config);
  CHECK(same_history(again.manifest.history, t.manifest.history));

  const auto bytes = read_file(dir + "/final.pvxl");
  save_checkpoint(dir + "/copy.pvxl", load_checkpoint(dir + "/final.pvxl"));
  CHECK(read_file(dir + "/copy.pvxl") == bytes);
}

TEST_CASE("non-finite loss aborts with the last good checkpoint") {
  const auto c = small(true);
  const auto s = load_splits(c);
  const auto dir = temp_dir("pvxl_abort");
  TrainOptions opt{dir, {}, std::pair<int, std::size_t>{1, 1}};
  std::string where;
  try {
    train(s, c, opt);
  } catch (const TrainingAborted& e) {
    where = e.what();
    CHECK(e.checkpoint == dir + "/last_good.pvxl");
    const auto last = load_trained(e.checkpoint);
    for (std::size_t i = 0; i < last.f64.size(); ++i)
      for (double v : last.f64.at(i).values()) CHECK(std::isfinite(v));
    CHECK(last.manifest.history.size() == 1);
  }
  CHECK(where.find("epoch 2, step 2") != std::string::npos);
}

TEST_CASE("without latents training is plain autoregressive likelihood") {
  auto c = small(false);
  c.epochs = 3;
  const auto s = load_splits(c);
  const auto t = train(s, c);
  CHECK(t.f64 == decoder_only_reference(s, c));
  for (const auto& r : t.manifest.history) CHECK(r.kl == 0.0);
}

TEST_CASE("validation bound improves") {
  auto c = small(true);
  c.data.n_train = 64;
  c.data.n_valid = 32;
  c.epochs = 10;
  c.batch = 16;
  c.precision = "float";
  c.adam.lr = 5e-3;
  const auto t = train(load_splits(c), c);
  const auto& h = t.manifest.history;
  CHECK(h.back().elbo > h.front().elbo);
  CHECK(h.back().train_loss < h.front().train_loss);
}

TEST_CASE("gaussian prior trains without log Z") {
  auto c = small(true);
  c.model.prior = PriorKind::gaussian;
  const auto t = train(load_splits(c), c);
  CHECK(t.log_z_est == 0.0);
  for (const auto& r : t.manifest.history) {
    CHECK(std::isfinite(r.elbo));
    CHECK(r.ess == 0.0);
  }
}

TEST_CASE("invalid configs are refused") {
  auto c = small(true);
  c.batch = 0;
  CHECK_THROWS_AS(train(load_splits(small(true)), c), std::invalid_argument);
  c = small(true);
  c.data.source = "mnist";
  CHECK_THROWS_AS(load_splits(c), std::invalid_argument);
  CHECK(version_string().rfind("pvxl ", 0) == 0);
}
