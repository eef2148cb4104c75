#pragma once

// Declarative end-to-end runs: dataset -> (aggregation) -> latents -> GMM
// scores -> best-F1 reports, with every intermediate persisted.

#include "mobanom/community.hpp"
#include "mobanom/density.hpp"
#include "mobanom/evaluate.hpp"
#include "mobanom/features.hpp"
#include "mobanom/graph.hpp"
#include "mobanom/ingest.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>

namespace mobanom {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

inline std::vector<Date> dates_from_json(const json& j) {
  std::vector<Date> out;
  for (const auto& s : j) out.push_back(Date::parse(s.get<std::string>()));
  return out;
}

}  // namespace detail

inline json synthetic_to_json(const SyntheticConfig& c) {
  json dates = json::array();
  for (const auto& d : c.anomaly_dates) dates.push_back(d.iso());
  return {{"n_nodes", c.n_nodes},
          {"n_days", c.n_days},
          {"start_date", c.start_date.iso()},
          {"seed", c.seed},
          {"weekday_base_flow", c.weekday_base_flow},
          {"weekend_scale", c.weekend_scale},
          {"noise_scale", c.noise_scale},
          {"node_noise_scale", c.node_noise_scale},
          {"anomaly_dates", dates},
          {"n_anomalies", c.n_anomalies},
          {"anomaly_strength", c.anomaly_strength},
          {"n_chords", c.n_chords},
          {"distance_decay", c.distance_decay},
          {"nuisance_factors", c.nuisance_factors},
          {"nuisance_scale", c.nuisance_scale}};
}

inline SyntheticConfig synthetic_from_json(const json& j) {
  detail::check_keys(j,
                     {"n_nodes", "n_days", "start_date", "seed", "weekday_base_flow",
                      "weekend_scale", "noise_scale", "node_noise_scale", "anomaly_dates",
                      "n_anomalies", "anomaly_strength", "n_chords", "distance_decay",
                      "nuisance_factors", "nuisance_scale"},
                     "synthetic");
  SyntheticConfig c;
  try {
    c.n_nodes = j.value("n_nodes", c.n_nodes);
    c.n_days = j.value("n_days", c.n_days);
    if (j.contains("start_date")) c.start_date = Date::parse(j["start_date"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.weekday_base_flow = j.value("weekday_base_flow", c.weekday_base_flow);
    c.weekend_scale = j.value("weekend_scale", c.weekend_scale);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.node_noise_scale = j.value("node_noise_scale", c.node_noise_scale);
    if (j.contains("anomaly_dates")) c.anomaly_dates = detail::dates_from_json(j["anomaly_dates"]);
    c.n_anomalies = j.value("n_anomalies", c.n_anomalies);
    c.anomaly_strength = j.value("anomaly_strength", c.anomaly_strength);
    c.n_chords = j.value("n_chords", c.n_chords);
    c.distance_decay = j.value("distance_decay", c.distance_decay);
    c.nuisance_factors = j.value("nuisance_factors", c.nuisance_factors);
    c.nuisance_scale = j.value("nuisance_scale", c.nuisance_scale);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("synthetic: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Run configuration

struct DatasetSource {
  std::optional<SyntheticConfig> synthetic;
  fs::path trips, nodes, holidays, physical_edges;
  std::vector<std::string> weekend_days = {"sat", "sun"};
};

struct CommunityConfig {
  int max_communities = 10;
  std::uint64_t seed = 1;
  int restarts = 4;
};

struct GmmConfig {
  int components = 2;  // 0 selects by BIC over 1..max_components
  int max_components = 5;
  std::uint64_t seed = 7;
  GmmOptions options;
};

struct RunConfig {
  DatasetSource dataset;
  std::string representation = "edge";
  CommunityConfig community;
  std::vector<std::string> methods = {"pca", "ae", "mlp"};
  std::vector<int> gcn_k_layers = {1};
  std::map<std::string, TrainConfig> train = {{"ae", TrainConfig::autoencoder_defaults()},
                                              {"mlp", TrainConfig::classifier_defaults()},
                                              {"gcn", TrainConfig::classifier_defaults()}};
  GmmConfig gmm;
  fs::path output_dir = "run";

  bool has_physical_graph() const {
    return dataset.synthetic.has_value() || !dataset.physical_edges.empty();
  }

  void validate() const {
    if (representation != "edge" && representation != "node")
      throw ConfigError("representation must be 'edge' or 'node'");
    if (methods.empty()) throw ConfigError("methods: at least one method required");
    std::set<std::string> seen;
    for (const auto& m : methods) {
      if (m != "pca" && m != "ae" && m != "mlp" && m != "gcn")
        throw ConfigError("methods: unknown method '" + m + "'");
      if (!seen.insert(m).second) throw ConfigError("methods: duplicate '" + m + "'");
    }
    if (seen.count("gcn")) {
      if (representation != "node") throw ConfigError("gcn requires representation=node");
      if (!has_physical_graph()) throw ConfigError("gcn requires a physical edge file");
      if (gcn_k_layers.empty()) throw ConfigError("gcn.k_layers must not be empty");
      for (int k : gcn_k_layers)
        if (k < 1) throw ConfigError("gcn.k_layers entries must be >= 1");
    }
    if (!dataset.synthetic &&
        (dataset.trips.empty() || dataset.nodes.empty() || dataset.holidays.empty()))
      throw ConfigError("dataset: need a synthetic block or trips, nodes and holidays paths");
    if (community.max_communities < 1) throw ConfigError("community.max_communities must be >= 1");
    if (community.restarts < 0) throw ConfigError("community.restarts must be >= 0");
    if (gmm.components < 0) throw ConfigError("gmm.components must be >= 1 or 'bic'");
    if (gmm.max_components < 1) throw ConfigError("gmm.max_components must be >= 1");
    if (gmm.options.max_iter < 1 || !(gmm.options.tol > 0.0) || !(gmm.options.reg >= 0.0))
      throw ConfigError("gmm: max_iter >= 1, tol > 0 and reg >= 0 required");
    for (const auto& [name, tc] : train) tc.validate();
    parse_weekend_days(dataset.weekend_days);
  }
};

/// Canonical form: every field explicit, so equal semantics give equal text.
inline json run_config_to_json(const RunConfig& c) {
  json ds;
  if (c.dataset.synthetic) ds["synthetic"] = synthetic_to_json(*c.dataset.synthetic);
  else
    ds = {{"trips", c.dataset.trips.generic_string()},
          {"nodes", c.dataset.nodes.generic_string()},
          {"holidays", c.dataset.holidays.generic_string()},
          {"physical_edges", c.dataset.physical_edges.generic_string()}};
  ds["weekend_days"] = c.dataset.weekend_days;
  json train = json::object();
  for (const auto& [name, tc] : c.train) train[name] = tc;
  json gmm = {{"max_components", c.gmm.max_components},
              {"seed", c.gmm.seed},
              {"max_iter", c.gmm.options.max_iter},
              {"tol", c.gmm.options.tol},
              {"reg", c.gmm.options.reg}};
  if (c.gmm.components == 0) gmm["components"] = "bic";
  else gmm["components"] = c.gmm.components;
  return {{"dataset", ds},
          {"representation", c.representation},
          {"community",
           {{"max_communities", c.community.max_communities},
            {"seed", c.community.seed},
            {"restarts", c.community.restarts}}},
          {"methods", c.methods},
          {"gcn", {{"k_layers", c.gcn_k_layers}}},
          {"train", train},
          {"gmm", gmm},
          {"output_dir", c.output_dir.generic_string()}};
}

/// Relative paths resolve against `base` (normally the config file's directory).
inline RunConfig run_config_from_json(const json& j, const fs::path& base = {}) {
  detail::check_keys(j,
                     {"dataset", "representation", "community", "methods", "gcn", "train", "gmm",
                      "output_dir"},
                     "config");
  RunConfig c;
  auto resolve = [&](const std::string& p) -> fs::path {
    if (p.empty()) return {};
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
  };
  try {
    if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset'");
    const auto& ds = j["dataset"];
    detail::check_keys(ds, {"synthetic", "trips", "nodes", "holidays", "physical_edges",
                            "weekend_days"},
                       "dataset");
    if (ds.contains("synthetic")) {
      for (const char* k : {"trips", "nodes", "holidays", "physical_edges"})
        if (ds.contains(k)) throw ConfigError("dataset: 'synthetic' excludes csv path '" +
                                              std::string(k) + "'");
      c.dataset.synthetic = synthetic_from_json(ds["synthetic"]);
    }
    c.dataset.trips = resolve(ds.value("trips", std::string{}));
    c.dataset.nodes = resolve(ds.value("nodes", std::string{}));
    c.dataset.holidays = resolve(ds.value("holidays", std::string{}));
    c.dataset.physical_edges = resolve(ds.value("physical_edges", std::string{}));
    c.dataset.weekend_days = ds.value("weekend_days", c.dataset.weekend_days);

    c.representation = j.value("representation", c.representation);
    if (j.contains("community")) {
      const auto& cm = j["community"];
      detail::check_keys(cm, {"max_communities", "seed", "restarts"}, "community");
      c.community.max_communities = cm.value("max_communities", c.community.max_communities);
      c.community.seed = cm.value("seed", c.community.seed);
      c.community.restarts = cm.value("restarts", c.community.restarts);
    }
    c.methods = j.value("methods", c.methods);
    if (j.contains("gcn")) {
      detail::check_keys(j["gcn"], {"k_layers"}, "gcn");
      c.gcn_k_layers = j["gcn"].value("k_layers", c.gcn_k_layers);
    }
    if (j.contains("train")) {
      const auto& tr = j["train"];
      detail::check_keys(tr, {"common", "ae", "mlp", "gcn"}, "train");
      for (auto& [name, tc] : c.train) {
        if (tr.contains("common")) from_json(tr["common"], tc);
        if (tr.contains(name)) from_json(tr[name], tc);
      }
    }
    if (j.contains("gmm")) {
      const auto& g = j["gmm"];
      detail::check_keys(g, {"components", "max_components", "seed", "max_iter", "tol", "reg"},
                         "gmm");
      if (g.contains("components")) {
        if (g["components"].is_string()) {
          if (g["components"].get<std::string>() != "bic")
            throw ConfigError("gmm.components must be an integer or 'bic'");
          c.gmm.components = 0;
        } else {
          c.gmm.components = g["components"].get<int>();
          if (c.gmm.components < 1) throw ConfigError("gmm.components must be >= 1 or 'bic'");
        }
      }
      c.gmm.max_components = g.value("max_components", c.gmm.max_components);
      c.gmm.seed = g.value("seed", c.gmm.seed);
      c.gmm.options.max_iter = g.value("max_iter", c.gmm.options.max_iter);
      c.gmm.options.tol = g.value("tol", c.gmm.options.tol);
      c.gmm.options.reg = g.value("reg", c.gmm.options.reg);
    }
    c.output_dir = resolve(j.value("output_dir", c.output_dir.string()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

/// Fingerprint over the canonical config minus the output location.
inline std::string config_hash(const RunConfig& c) {
  auto j = run_config_to_json(c);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

// ---------------------------------------------------------------------------
// Datasets

struct LoadedDataset {
  ODTensor tensor;
  DayCalendar calendar;
  std::optional<PhysicalGraph> graph;
};

struct SynthFiles {
  fs::path trips, nodes, holidays, physical_edges;
};

/// Writes trips.csv, nodes.csv, holidays.csv and physical_edges.csv.
inline SynthFiles write_synthetic(const SyntheticDataset& ds, const fs::path& dir) {
  SynthFiles f{dir / "trips.csv", dir / "nodes.csv", dir / "holidays.csv",
               dir / "physical_edges.csv"};
  write_atomic(f.trips, trips_to_csv(ds.tensor));
  std::string nodes = "node_id,name\n";
  for (const auto& id : ds.tensor.node_ids) nodes += id + ',' + id + '\n';
  write_atomic(f.nodes, nodes);
  std::string hol = "date,label\n";
  for (std::size_t d = 0; d < ds.calendar.dates.size(); ++d)
    if (ds.calendar.is_holiday[d]) hol += ds.calendar.dates[d].iso() + ",planted\n";
  write_atomic(f.holidays, hol);
  write_atomic(f.physical_edges, physical_edges_to_csv(ds.physical_edges));
  return f;
}

inline std::vector<Date> holiday_dates(const std::vector<Holiday>& hs) {
  std::vector<Date> out;
  for (const auto& h : hs) out.push_back(h.date);
  return out;
}

inline LoadedDataset load_csv_dataset(const fs::path& trips, const fs::path& nodes,
                                      const fs::path& holidays, const fs::path& physical_edges,
                                      const std::vector<std::string>& weekend_days) {
  auto nin = open_input(nodes);
  auto registry = read_node_registry(nin);
  auto tin = open_input(trips);
  LoadedDataset out;
  out.tensor = parse_trip_records(tin, registry);
  auto hin = open_input(holidays);
  out.calendar = build_calendar(out.tensor.dates, holiday_dates(read_holidays(hin)),
                                parse_weekend_days(weekend_days));
  if (!physical_edges.empty()) {
    auto ein = open_input(physical_edges);
    out.graph = build_physical_graph(read_physical_edges(ein), registry);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

struct MethodArtifacts {
  std::string id;
  std::string display;
  fs::path latent, model, gmm, scores, evaluation;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  json seeds;
  std::map<std::string, fs::path> artifacts;
  int community_count = 0;
  std::vector<MethodArtifacts> methods;
  std::map<std::string, double> timings;
};

struct RunResult {
  RunManifest manifest;
  std::vector<DetectionReport> reports;
};

inline json manifest_to_json(const RunManifest& m, const fs::path& root) {
  auto rel = [&](const fs::path& p) { return fs::relative(p, root).generic_string(); };
  json arts = json::object();
  for (const auto& [k, p] : m.artifacts) arts[k] = rel(p);
  json methods = json::array();
  for (const auto& a : m.methods)
    methods.push_back({{"id", a.id},
                       {"method", a.display},
                       {"latent", rel(a.latent)},
                       {"model", rel(a.model)},
                       {"gmm", rel(a.gmm)},
                       {"scores", rel(a.scores)},
                       {"evaluation", rel(a.evaluation)},
                       {"seconds", a.seconds}});
  return {{"config_hash", m.config_hash}, {"seeds", m.seeds},
          {"artifacts", arts},            {"community_count", m.community_count},
          {"methods", methods},           {"timings", m.timings}};
}

/// Error raised inside a stage, tagged with the stage name and original category.
template <class E>
[[noreturn]] inline void rethrow_in_stage(const std::string& stage, const E& e) {
  throw E("stage " + stage + ": " + e.what());
}

inline std::string method_display(const std::string& id, int k = 0) {
  if (id == "pca") return "PCA";
  if (id == "ae") return "Autoencoder";
  if (id == "mlp") return "Discriminative MLP";
  return "Discriminative GCN k=" + std::to_string(k);
}

inline GmmModel fit_density(const FeatureMatrix& z, const GmmConfig& g) {
  return g.components == 0 ? gmm_select_bic(z, g.max_components, g.seed, g.options)
                           : gmm_fit(z, g.components, g.seed, g.options);
}

/// Runs every stage. On failure the output directory keeps whatever was
/// written plus a `.partial` marker naming the failed stage.
inline RunResult run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const fs::path out = cfg.output_dir;
  const fs::path marker = out / ".partial";
  fs::create_directories(out);
  if (fs::exists(out / "manifest.json")) fs::remove(out / "manifest.json");

  RunResult result;
  auto& man = result.manifest;
  man.config_hash = config_hash(cfg);
  man.seeds = {{"community", cfg.community.seed}, {"gmm", cfg.gmm.seed}};
  for (const auto& [name, tc] : cfg.train) man.seeds["train_" + name] = tc.seed;
  if (cfg.dataset.synthetic) man.seeds["synthetic"] = cfg.dataset.synthetic->seed;

  std::string stage;
  auto timed = [&](const std::string& name, const std::function<void()>& body) {
    stage = name;
    write_atomic(marker, "stage " + name + "\n");
    auto t0 = clock::now();
    try {
      body();
    } catch (const ConfigError& e) {
      write_atomic(marker, "stage " + name + " failed: " + e.what() + "\n");
      rethrow_in_stage(name, e);
    } catch (const NumericError& e) {
      write_atomic(marker, "stage " + name + " failed: " + e.what() + "\n");
      rethrow_in_stage(name, e);
    } catch (const DataError& e) {
      write_atomic(marker, "stage " + name + " failed: " + e.what() + "\n");
      rethrow_in_stage(name, e);
    } catch (const std::exception& e) {
      write_atomic(marker, "stage " + name + " failed: " + e.what() + "\n");
      throw DataError("stage " + name + ": " + e.what());
    }
    man.timings[name] = std::chrono::duration<double>(clock::now() - t0).count();
  };

  write_atomic(out / "config.json", run_config_to_json(cfg).dump(2) + "\n");
  man.artifacts["config"] = out / "config.json";

  LoadedDataset data;
  timed("ingest", [&] {
    const auto& ds = cfg.dataset;
    if (ds.synthetic) {
      auto syn = generate_synthetic(*ds.synthetic);
      auto files = write_synthetic(syn, out / "data");
      data = load_csv_dataset(files.trips, files.nodes, files.holidays, files.physical_edges,
                              ds.weekend_days);
      man.artifacts["trips"] = files.trips;
      man.artifacts["nodes"] = files.nodes;
      man.artifacts["holidays"] = files.holidays;
      man.artifacts["physical_edges"] = files.physical_edges;
    } else {
      data = load_csv_dataset(ds.trips, ds.nodes, ds.holidays, ds.physical_edges,
                              ds.weekend_days);
    }
  });

  FeatureMatrix x;
  FeatureMatrix node_x;
  timed("aggregate", [&] {
    if (cfg.representation == "edge") {
      auto part = combo_partition(mean_graph(data.tensor), cfg.community.max_communities,
                                  cfg.community.seed, cfg.community.restarts);
      man.community_count = part.count;
      write_atomic(out / "partition.csv", partition_to_csv(part));
      man.artifacts["partition"] = out / "partition.csv";
      x = flatten_edges(aggregate_by_partition(normalize_spatial(data.tensor), part));
    } else {
      x = flatten_nodes(normalize_node_features(node_features(data.tensor)));
      node_x = x;
    }
    write_atomic(out / "features.csv", features_to_csv(x, "f"));
    man.artifacts["features"] = out / "features.csv";
  });

  struct Latent {
    MethodArtifacts art;
    FeatureMatrix z;
  };
  std::vector<Latent> latents;
  timed("features", [&] {
    const auto& labels = data.calendar.weekday_class;
    for (const auto& m : cfg.methods) {
      std::vector<int> ks = m == "gcn" ? cfg.gcn_k_layers : std::vector<int>{0};
      for (int k : ks) {
        Latent l;
        l.art.id = m == "gcn" ? "gcn_k" + std::to_string(k) : m;
        l.art.display = method_display(m, k);
        l.art.latent = out / "latent" / (l.art.id + ".csv");
        l.art.model = out / "models" / (l.art.id + ".json");
        auto t0 = clock::now();
        json model;
        if (m == "pca") {
          auto pm = pca_fit(x);
          l.z = pca_transform(pm, x);
          model = model_to_json(pm);
        } else if (m == "ae") {
          auto am = ae_train(x, cfg.train.at("ae"));
          l.z = ae_encode(am, x);
          model = model_to_json(am);
        } else if (m == "mlp") {
          auto mm = mlp_train(x, labels, cfg.train.at("mlp"));
          l.z = mlp_latent(mm, x);
          model = model_to_json(mm);
        } else {
          auto gm = gcn_train(node_x, normalize_adjacency(*data.graph), labels,
                              cfg.train.at("gcn"), k);
          l.z = gcn_latent(gm, node_x);
          model = model_to_json(gm);
        }
        require_latent_width(l.z, l.art.id);
        l.art.seconds = std::chrono::duration<double>(clock::now() - t0).count();
        write_atomic(l.art.latent, features_to_csv(l.z));
        write_atomic(l.art.model, model.dump() + "\n");
        latents.push_back(std::move(l));
      }
    }
  });

  std::vector<std::vector<AnomalyScore>> scores;
  std::vector<int> components;
  timed("detect", [&] {
    for (auto& l : latents) {
      auto g = fit_density(l.z, cfg.gmm);
      l.art.gmm = out / "models" / (l.art.id + "_gmm.json");
      l.art.scores = out / "scores" / (l.art.id + ".csv");
      write_atomic(l.art.gmm, gmm_to_json(g).dump() + "\n");
      scores.push_back(score_days(g, l.z));
      components.push_back(g.components());
      write_atomic(l.art.scores, scores_to_csv(scores.back()));
    }
  });

  timed("evaluate", [&] {
    for (std::size_t i = 0; i < latents.size(); ++i) {
      auto r = best_f1_sweep(scores[i], data.calendar, latents[i].art.display);
      r.gmm_components = components[i];
      r.seed = cfg.gmm.seed;
      latents[i].art.evaluation = out / "evaluation" / (latents[i].art.id + ".csv");
      write_atomic(latents[i].art.evaluation, report_rows_to_csv(r));
      result.reports.push_back(std::move(r));
    }
    auto rendered = render_report(result.reports);
    write_atomic(out / "report.csv", rendered.csv);
    write_atomic(out / "report.txt", rendered.text);
    man.artifacts["report_csv"] = out / "report.csv";
    man.artifacts["report_txt"] = out / "report.txt";
  });

  for (auto& l : latents) man.methods.push_back(l.art);
  write_atomic(out / "manifest.json", manifest_to_json(man, out).dump(2) + "\n");
  fs::remove(marker);
  return result;
}

}  // namespace mobanom
