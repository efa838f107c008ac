#include "pvxl/config.hpp"

#include <set>

#include "pvxl/io.hpp"

namespace pvxl {

namespace {

using nlohmann::json;

template <class E>
struct Names {
  std::vector<std::pair<E, const char*>> items;
  const char* name(E e) const {
    for (const auto& [v, n] : items)
      if (v == e) return n;
    return "?";
  }
  E parse(const std::string& s, const std::string& path) const {
    for (const auto& [v, n] : items)
      if (s == n) return v;
    std::string all;
    for (const auto& [v, n] : items) all += std::string(all.empty() ? "" : ", ") + n;
    throw ConfigError(path + ": unknown value '" + s + "' (" + all + ")");
  }
};

const Names<HeadKind> kHeads{{{HeadKind::bernoulli, "bernoulli"}, {HeadKind::dlm, "dlm"}}};
const Names<PriorKind> kPriors{{{PriorKind::rbm, "rbm"}, {PriorKind::gaussian, "gaussian"}}};
const Names<TauSchedule> kSchedules{
    {{TauSchedule::constant, "constant"}, {TauSchedule::increasing, "increasing"}, {TauSchedule::decreasing, "decreasing"}}};
const Names<Spacing> kSpacings{{{Spacing::linear, "linear"}, {Spacing::geometric_tail, "geometric_tail"}}};

// Reads known keys of one object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  template <class E>
  void get_enum(const char* key, E& out, const Names<E>& names) {
    std::string s = names.name(out);
    get(key, s);
    out = names.parse(s, where(key));
  }

  /// Sub-object reader, or nullopt when absent.
  std::optional<Reader> sub(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Reader(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + where(item.key().c_str()) + "'");
    }
  }

 private:
  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Reader& r, ModelConfig& m) {
  r.get("height", m.height);
  r.get("width", m.width);
  if (auto h = r.sub("head")) {
    h->get_enum("kind", m.head.kind, kHeads);
    h->get("channels", m.head.channels);
    h->get("mixtures", m.head.mixtures);
    h->finish();
  }
  r.get("resnets", m.resnets);
  r.get("filters", m.filters);
  r.get("strides", m.strides);
  r.get("z1", m.z1);
  r.get("z2", m.z2);
  r.get("z3", m.z3);
  r.get("z3_units", m.z3_units);
  r.get_enum("prior", m.prior, kPriors);
  r.get("weight_norm", m.weight_norm);
  r.get("latent_filters", m.latent_filters);
  r.get("bridge_channels", m.bridge_channels);
  r.finish();
}

json metric_json(const MetricRow& r) {
  return {{"epoch", r.epoch}, {"elbo", r.elbo}, {"recon", r.recon},         {"kl", r.kl},
          {"beta", r.beta},   {"tau", r.tau},   {"log_z_est", r.log_z_est}, {"ess", r.ess},
          {"wall_time", r.wall_time}, {"train_loss", r.train_loss}};
}

MetricRow metric_from(const json& j) {
  MetricRow r;
  Reader rd(j, "history");
  rd.get("epoch", r.epoch);
  rd.get("elbo", r.elbo);
  rd.get("recon", r.recon);
  rd.get("kl", r.kl);
  rd.get("beta", r.beta);
  rd.get("tau", r.tau);
  rd.get("log_z_est", r.log_z_est);
  rd.get("ess", r.ess);
  rd.get("wall_time", r.wall_time);
  rd.get("train_loss", r.train_loss);
  rd.finish();
  return r;
}

}  // namespace

json model_to_json(const ModelConfig& m) {
  return {{"height", m.height},
          {"width", m.width},
          {"head", {{"kind", kHeads.name(m.head.kind)}, {"channels", m.head.channels}, {"mixtures", m.head.mixtures}}},
          {"resnets", m.resnets},
          {"filters", m.filters},
          {"strides", m.strides},
          {"z1", m.z1},
          {"z2", m.z2},
          {"z3", m.z3},
          {"z3_units", m.z3_units},
          {"prior", kPriors.name(m.prior)},
          {"weight_norm", m.weight_norm},
          {"latent_filters", m.latent_filters},
          {"bridge_channels", m.bridge_channels}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  Reader r(j, "model");
  read_model(r, m);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return m;
}

json config_to_json(const TrainConfig& c) {
  const auto& d = c.data;
  return {{"model", model_to_json(c.model)},
          {"data",
           {{"source", d.source},
            {"train_images", d.train_images},
            {"train_labels", d.train_labels},
            {"test_images", d.test_images},
            {"test_labels", d.test_labels},
            {"n_train", d.n_train},
            {"n_valid", d.n_valid},
            {"size", d.size},
            {"binarization", d.binarization},
            {"keep_bytes", d.keep_bytes}}},
          {"batch", c.batch},
          {"epochs", c.epochs},
          {"adam",
           {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}, {"decay", c.adam.decay}}},
          {"kl_anneal_epochs", c.kl_anneal_epochs},
          {"tau",
           {{"tau", c.tau.tau},
            {"schedule", kSchedules.name(c.tau.schedule)},
            {"tau_end", c.tau.tau_end},
            {"horizon", c.tau.horizon},
            {"allow_any_tau", c.tau.allow_any_tau}}},
          {"ais",
           {{"steps", c.ais.steps},
            {"updates", c.ais.updates},
            {"chains", c.ais.chains},
            {"spacing", kSpacings.name(c.ais.spacing)},
            {"refresh_every", c.ais.refresh_every},
            {"gibbs_per_step", c.ais.gibbs_per_step}}},
          {"path_derivative", c.path_derivative},
          {"precision", c.precision},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  Reader r(j, "");
  if (auto m = r.sub("model")) read_model(*m, c.model);
  if (auto d = r.sub("data")) {
    d->get("source", c.data.source);
    d->get("train_images", c.data.train_images);
    d->get("train_labels", c.data.train_labels);
    d->get("test_images", c.data.test_images);
    d->get("test_labels", c.data.test_labels);
    d->get("n_train", c.data.n_train);
    d->get("n_valid", c.data.n_valid);
    d->get("size", c.data.size);
    d->get("binarization", c.data.binarization);
    d->get("keep_bytes", c.data.keep_bytes);
    d->finish();
  }
  r.get("batch", c.batch);
  r.get("epochs", c.epochs);
  if (auto a = r.sub("adam")) {
    a->get("lr", c.adam.lr);
    a->get("beta1", c.adam.beta1);
    a->get("beta2", c.adam.beta2);
    a->get("eps", c.adam.eps);
    a->get("decay", c.adam.decay);
    a->finish();
  }
  r.get("kl_anneal_epochs", c.kl_anneal_epochs);
  if (auto t = r.sub("tau")) {
    t->get("tau", c.tau.tau);
    t->get_enum("schedule", c.tau.schedule, kSchedules);
    t->get("tau_end", c.tau.tau_end);
    t->get("horizon", c.tau.horizon);
    t->get("allow_any_tau", c.tau.allow_any_tau);
    t->finish();
  }
  if (auto a = r.sub("ais")) {
    a->get("steps", c.ais.steps);
    a->get("updates", c.ais.updates);
    a->get("chains", c.ais.chains);
    a->get_enum("spacing", c.ais.spacing, kSpacings);
    a->get("refresh_every", c.ais.refresh_every);
    a->get("gibbs_per_step", c.ais.gibbs_per_step);
    a->finish();
  }
  r.get("path_derivative", c.path_derivative);
  r.get("precision", c.precision);
  r.get("seed", c.seed);
  r.get("checkpoint_every", c.checkpoint_every);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig config_load(const std::string& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError(path + ": not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void config_save(const std::string& path, const TrainConfig& cfg) { write_text(path, config_to_json(cfg).dump(2) + "\n"); }

json manifest_to_json(const RunManifest& m) {
  json history = json::array();
  for (const auto& r : m.history) history.push_back(metric_json(r));
  return {{"config", config_to_json(m.config)},   {"seed", m.seed},         {"version", m.version},
          {"dataset_fingerprint", m.dataset_fingerprint}, {"history", history}, {"checkpoints", m.checkpoints}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  Reader r(j, "manifest");
  auto cfg = r.sub("config");
  if (!cfg) throw ConfigError("manifest: missing config");
  m.config = config_from_json(j.at("config"));
  r.get("seed", m.seed);
  r.get("version", m.version);
  r.get("dataset_fingerprint", m.dataset_fingerprint);
  json history = json::array();
  r.get("history", history);
  for (const auto& row : history) m.history.push_back(metric_from(row));
  r.get("checkpoints", m.checkpoints);
  r.finish();
  return m;
}

}  // namespace pvxl
