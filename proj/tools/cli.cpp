/*
 * Copyright 2026 The relml Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cli.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "relml/dispatcher.hpp"
#include "relml/pipeline.hpp"
#include "relml/reporting.hpp"
#include "relml/synth.hpp"

namespace relml::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char* kConfigHelp = R"(Configuration: every command reads one JSON file (--config) whose keys
are overridden by flags. Top-level keys:
  data, task, profile, out, model_dir, output, seed, max_hops, kind,
  model_id, base_id, pool, registry, register, decision, pretrained,
  lr_search, epsilon, beta, prior, scores, observe, split, top_k
Sections: model {dim, encoder_depth, heads, mp_layers, aggregator,
  activation, mp_layer_norm, use_fusion}, train {batch_size, lr,
  max_epochs, patience, weight_decay, min_delta, fanout, sampling},
  pretrain {steps, batch_size, mask_rate, lr, fanout, sampling},
  base {kind, attr_dim, hidden, activation}, synth {customers, products,
  min_orders, max_orders, extra_tables, signal, task_type, preference}.
A top-level seed fills every section that does not set its own.
The report narrative client is enabled by RELML_LLM_ENDPOINT (bearer
token in RELML_LLM_API_KEY).)";

// ---------------------------------------------------------------------------
// Files

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& ex) {
    throw Error(ErrorKind::kInput, path.string() + ": " + ex.what());
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

/// FNV-1a over schema.json and every table file, in catalog order.
std::string dataset_hash(const fs::path& dir, const Catalog& catalog) {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&](const std::string& bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  mix(read_text(dir / "schema.json"));
  for (const auto& t : catalog.tables) mix(read_text(dir / t.file));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Config plus flag overrides

struct Override {
  std::vector<std::string> pointers;
  char type;  // s string, u unsigned, d double, b bool, l unsigned list, k key=double
  std::vector<std::string> values;
};

json convert(char type, const std::string& text, const std::string& flag) {
  auto fail = [&]() -> json { throw Error(ErrorKind::kUsage, "invalid value for " + flag + ": " + text); };
  auto unsigned_of = [&](const std::string& s) -> json {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return fail();
    errno = 0;
    const auto v = std::strtoull(s.c_str(), nullptr, 10);
    if (errno) return fail();
    return v;
  };
  auto double_of = [&](const std::string& s) -> json {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) return fail();
    return v;
  };
  switch (type) {
    case 's':
      return text;
    case 'u':
      return unsigned_of(text);
    case 'd':
      return double_of(text);
    case 'b':
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      return fail();
    case 'l': {
      json list = json::array();
      std::stringstream in(text);
      for (std::string item; std::getline(in, item, ',');) list.push_back(unsigned_of(item));
      if (list.empty()) return fail();
      return list;
    }
    default:
      return fail();
  }
}

class Settings {
 public:
  CLI::Option* add(CLI::App* app, const std::string& flag, std::vector<std::string> pointers, char type,
                   const std::string& help) {
    return app->add_option_function<std::string>(
        flag, [this, pointers, type](const std::string& v) { given_.push_back({pointers, type, {v}}); }, help);
  }

  /// Repeatable `--flag key=value` entries stored under one object.
  void add_map(CLI::App* app, const std::string& flag, const std::string& pointer, const std::string& help) {
    app->add_option_function<std::vector<std::string>>(
        flag, [this, pointer](const std::vector<std::string>& v) { given_.push_back({{pointer}, 'k', v}); }, help);
  }

  void add_config(CLI::App* app) {
    app->add_option("--config", config_path_, "JSON configuration file");
  }

  json resolve() const {
    json cfg = config_path_.empty() ? json::object() : read_json(config_path_);
    if (!cfg.is_object()) throw Error(ErrorKind::kUsage, "configuration must be a JSON object");
    for (const auto& o : given_) {
      for (const auto& pointer : o.pointers) {
        const json::json_pointer ptr(pointer);
        if (o.type == 'k') {
          for (const auto& entry : o.values) {
            const auto eq = entry.find('=');
            if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::kUsage, "expected id=value: " + entry);
            cfg[ptr][entry.substr(0, eq)] = convert('d', entry.substr(eq + 1), pointer);
          }
        } else {
          cfg[ptr] = convert(o.type, o.values.front(), pointer);
        }
      }
    }
    if (cfg.contains("seed")) {
      for (const char* section : {"model", "train", "pretrain", "synth"}) {
        if (!cfg.contains(section)) cfg[section] = json::object();
        if (!cfg[section].contains("seed")) cfg[section]["seed"] = cfg["seed"];
      }
    }
    return cfg;
  }

 private:
  std::string config_path_;
  std::vector<Override> given_;
};

std::string need_string(const json& cfg, const std::string& key, const std::string& flag) {
  if (!cfg.contains(key) || !cfg[key].is_string()) {
    throw Error(ErrorKind::kUsage, "missing " + flag + " (config key \"" + key + "\")");
  }
  return cfg[key].get<std::string>();
}

json section(const json& cfg, const char* name) { return cfg.value(name, json::object()); }

template <typename T>
T get_or(const json& cfg, const char* key, T fallback) {
  try {
    return cfg.value(key, fallback);
  } catch (const json::exception&) {
    throw Error(ErrorKind::kUsage, std::string("config key \"") + key + "\" has the wrong type");
  }
}

// ---------------------------------------------------------------------------
// Task preparation

struct Prepared {
  fs::path data_dir;
  std::string data_hash;
  TaskProfile task;
  DataProfile profile;
  std::vector<std::string> warnings;
  std::unique_ptr<TaskData> data;
};

Database load_database(const fs::path& dir) { return load_catalog(dir).database; }

TaskProfile load_task(const json& cfg, const Database& db) {
  return validate_task_profile_text(read_text(need_string(cfg, "task", "--task")), db);
}

Prepared prepare(const json& cfg) {
  Prepared p;
  p.data_dir = need_string(cfg, "data", "--data");
  const Database db = load_database(p.data_dir);
  p.data_hash = dataset_hash(p.data_dir, db.catalog);
  p.task = load_task(cfg, db);
  if (cfg.contains("profile")) {
    p.profile = parse_data_profile(read_json(need_string(cfg, "profile", "--profile")), db.catalog);
  } else {
    DeriveOptions options;
    options.max_hops = get_or(cfg, "max_hops", options.max_hops);
    auto derived = derive_data_profile(p.task, db, options);
    p.profile = std::move(derived.profile);
    p.warnings = std::move(derived.warnings);
  }
  p.data = std::make_unique<TaskData>(prepare_task(db, p.task, p.profile));
  return p;
}

LabeledRows split_rows(const TaskData& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "valid") return data.valid;
  if (split == "test") return data.test;
  if (split == "all") return all_labeled(data);
  throw Error(ErrorKind::kUsage, "unknown split: " + split + " (train, valid, test, all)");
}

std::string metric_name(TaskType type) { return type == TaskType::kClassification ? "auc" : "mae"; }

std::string row_key(const Table& target, std::size_t row) {
  const auto pk = target.meta.primary_key_index();
  return pk ? value_text(target.rows[row][*pk]) : std::to_string(row);
}

// ---------------------------------------------------------------------------
// Trained runs (a directory holding run.json and model.ckpt)

struct LoadedRun {
  json run;
  Prepared prepared;
  TrainConfig train;
  std::unique_ptr<GraphData> graph;
  std::unique_ptr<Predictor> predictor;

  DimePredictor* dime() { return dynamic_cast<DimePredictor*>(predictor.get()); }
  const TaskData& data() const { return *prepared.data; }
};

LoadedRun load_run(const json& cfg) {
  const fs::path dir = need_string(cfg, "model_dir", "--model");
  LoadedRun r;
  r.run = read_json(dir / "run.json");
  r.prepared.data_dir = need_string(cfg, "data", "--data");
  const Database db = load_database(r.prepared.data_dir);
  r.prepared.data_hash = dataset_hash(r.prepared.data_dir, db.catalog);
  r.prepared.task = validate_task_profile(r.run.at("task"), db);
  r.prepared.profile = parse_data_profile(r.run.at("profile"), db.catalog);
  r.prepared.data = std::make_unique<TaskData>(prepare_task(db, r.prepared.task, r.prepared.profile));
  if (r.prepared.data_hash != r.run.value("data_hash", "")) {
    r.prepared.warnings.push_back("dataset differs from the one used for training");
  }
  r.train = TrainConfig::from_json(r.run.at("train"));
  const fs::path ckpt = dir / r.run.at("checkpoint").get<std::string>();
  const auto& data = *r.prepared.data;
  if (r.run.at("kind") == "base") {
    r.predictor = std::make_unique<BasePredictor>(BaseBundle::load(ckpt), data.slice.target(), data.task.task_type);
  } else {
    auto model = DimeModel::load(ckpt);
    r.graph = std::make_unique<GraphData>(prepare_graph(*model, data.slice.database));
    r.predictor = std::make_unique<DimePredictor>(std::move(model), *r.graph, r.train.sampling);
  }
  return r;
}

/// Raw outputs for arbitrary target rows, batched like `evaluate`.
std::vector<double> predict_rows(const Predictor& p, std::span<const std::size_t> rows, std::size_t batch,
                                 std::uint64_t seed) {
  NoGradGuard guard;
  Rng rng(seed);
  std::vector<double> out;
  for (std::size_t start = 0; start < rows.size(); start += batch) {
    const auto t = p.predict(rows.subspan(start, std::min(batch, rows.size() - start)), rng);
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  return out;
}

double to_output(TaskType type, double raw) { return type == TaskType::kClassification ? 1.0 / (1.0 + std::exp(-raw)) : raw; }

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(const json& cfg, std::ostream& out) {
  const fs::path dir = need_string(cfg, "data", "<dir>");
  const auto loaded = load_catalog(dir);
  json summary = catalog_summary(loaded.database);
  json integrity = json::array();
  for (const auto& fk : loaded.integrity) {
    integrity.push_back({{"relation", fk.relation.name()}, {"references", fk.references}, {"dangling", fk.dangling}});
  }
  summary["integrity"] = std::move(integrity);
  summary["data_hash"] = dataset_hash(dir, loaded.database.catalog);
  out << summary.dump(2) << "\n";
  return 0;
}

int cmd_profile_validate(const json& cfg, std::ostream& out) {
  const Database db = load_database(need_string(cfg, "data", "--data"));
  json result = {{"task", task_profile_to_json(load_task(cfg, db))}};
  if (cfg.contains("profile")) {
    result["profile"] =
        data_profile_to_json(parse_data_profile(read_json(need_string(cfg, "profile", "--profile")), db.catalog));
  }
  out << result.dump(2) << "\n";
  return 0;
}

int cmd_profile_derive(const json& cfg, std::ostream& out) {
  const Database db = load_database(need_string(cfg, "data", "--data"));
  const TaskProfile task = load_task(cfg, db);
  DeriveOptions options;
  options.max_hops = get_or(cfg, "max_hops", options.max_hops);
  const auto derived = derive_data_profile(task, db, options);
  json sql = json::array();
  for (const auto& f : emit_sql_fragments(derived.profile, db.catalog)) {
    sql.push_back({{"table", f.table}, {"sql", f.sql}, {"joins", f.join_comments}});
  }
  const json profile = data_profile_to_json(derived.profile);
  if (cfg.contains("output")) write_text(need_string(cfg, "output", "--output"), profile.dump(2) + "\n");
  out << json{{"profile", profile}, {"sql", sql}, {"warnings", derived.warnings}}.dump(2) << "\n";
  return 0;
}

int cmd_synth(const json& cfg, std::ostream& out) {
  const fs::path dir = need_string(cfg, "out", "--out");
  const SynthConfig config = SynthConfig::from_json(section(cfg, "synth"));
  const auto data = generate_synthetic(config);
  write_synthetic(dir, data);
  json tables = json::object();
  for (const auto& t : data.database.tables) tables[t.meta.name] = t.rows.size();
  out << json{{"out", dir.string()}, {"tables", tables}, {"task", task_profile_to_json(data.task)},
              {"config", config.to_json()}}
             .dump(2)
      << "\n";
  return 0;
}

int cmd_dispatch(const json& cfg, std::ostream& out) {
  const double epsilon = get_or(cfg, "epsilon", 0.1);
  const double beta = get_or(cfg, "beta", 0.9);
  const double prior = get_or(cfg, "prior", 0.5);
  const fs::path registry_path = need_string(cfg, "registry", "--registry");
  PerfRegistry registry = PerfRegistry::load(registry_path);

  Decision decision;
  std::string sig;
  const auto record = [&](const TaskProfile& task) {
    sig = task_signature(task);
    if (cfg.contains("observe")) {
      for (const auto& [id, score] : cfg["observe"].items()) registry.update_ema(id, sig, score.get<double>(), beta);
      registry.save(registry_path);
    }
  };
  if (cfg.contains("scores")) {
    const Database db = load_database(need_string(cfg, "data", "--data"));
    record(load_task(cfg, db));
    decision = decide(cfg["scores"].get<std::map<std::string, double>>(), registry, sig, epsilon, prior);
  } else {
    const auto p = prepare(cfg);
    record(p.task);
    const ModelPool pool(need_string(cfg, "pool", "--pool"));
    const auto& probe = p.data->train;
    decision = dispatch(pool, registry, p.task, p.data->slice.target(), probe.rows, probe.labels, epsilon,
                        get_or<std::uint64_t>(cfg, "seed", 0), prior);
  }
  json doc = decision.to_json();
  doc["task_sig"] = sig;
  if (cfg.contains("output")) write_text(need_string(cfg, "output", "--output"), doc.dump(2) + "\n");
  out << doc.dump(2) << "\n";
  return 0;
}

int cmd_pretrain(const json& cfg, std::ostream& out) {
  const fs::path dir = need_string(cfg, "out", "--out");
  const auto p = prepare(cfg);
  const FeatureSpace features = fit_features(*p.data);
  auto model = build_model(*p.data, features, ModelConfig::from_json(section(cfg, "model")));
  const GraphData graph = prepare_graph(*model, p.data->slice.database);
  const PretrainConfig config = PretrainConfig::from_json(section(cfg, "pretrain"));
  const GraphData* corpus[] = {&graph};
  const auto result = pretrain_shared(*model, corpus, config);
  for (std::size_t s = 0; s < result.losses.size(); ++s) out << json{{"step", s}, {"loss", result.losses[s]}}.dump() << "\n";
  model->save(dir / "pretrained.ckpt", {{"pretrain", config.to_json()}});
  json summary = {{"checkpoint", (dir / "pretrained.ckpt").string()}, {"steps", result.losses.size()}};
  if (!result.losses.empty()) {
    summary["first_loss"] = result.losses.front();
    summary["last_loss"] = result.losses.back();
  }
  out << summary.dump() << "\n";
  return 0;
}

int cmd_train(const json& cfg, std::ostream& out) {
  const fs::path dir = need_string(cfg, "out", "--out");
  const auto p = prepare(cfg);
  const TaskData& data = *p.data;
  const TaskType type = data.task.task_type;
  const std::string sig = task_signature(data.task);

  std::string kind = get_or<std::string>(cfg, "kind", "dime");
  std::optional<std::string> base_id;
  if (cfg.contains("base_id")) base_id = need_string(cfg, "base_id", "--base-id");
  bool from_pool = false;
  if (cfg.contains("decision")) {
    const auto decision = Decision::from_json(read_json(need_string(cfg, "decision", "--decision")));
    base_id = decision.selected;
    kind = decision.action == DispatchAction::kDeployBase ? "base" : "dime";
    from_pool = kind == "base";
  }
  if (kind != "dime" && kind != "base") throw Error(ErrorKind::kUsage, "unknown kind: " + kind + " (dime, base)");
  std::optional<ModelPool> pool;
  if (base_id || cfg.value("register", false)) pool.emplace(need_string(cfg, "pool", "--pool"));

  TrainConfig train = TrainConfig::from_json(section(cfg, "train"));
  const auto on_epoch = [&](const EpochRecord& e) { out << e.to_json().dump() << "\n"; };
  const bool lr_search = cfg.value("lr_search", false);

  std::unique_ptr<Predictor> predictor;
  std::unique_ptr<GraphData> graph;
  TrainResult result;
  json model_config;
  std::function<std::unique_ptr<Predictor>()> make;

  if (kind == "base") {
    std::unique_ptr<BaseBundle> initial;
    if (from_pool) {
      initial = pool->load_model(*base_id);
    } else {
      const auto base_config = BaseModelConfig::from_json(section(cfg, "base"));
      initial = BaseBundle::create(get_or<std::string>(cfg, "model_id", "base"), data.slice.database,
                                   data.task.target_table, data.task.target_column, base_config, train.seed);
    }
    model_config = initial->model.config.to_json();
    make = [&data, type, initial = std::shared_ptr<BaseBundle>(std::move(initial))] {
      return std::make_unique<BasePredictor>(clone(*initial), data.slice.target(), type);
    };
  } else {
    std::unique_ptr<BaseBundle> base;
    if (base_id) base = pool->load_model(*base_id);
    std::shared_ptr<const Checkpoint> pretrained;
    if (cfg.contains("pretrained")) {
      pretrained = std::make_shared<Checkpoint>(load_checkpoint(need_string(cfg, "pretrained", "--pretrained")));
    }
    const FeatureSpace features = fit_features(data);
    const ModelConfig config = ModelConfig::from_json(section(cfg, "model"));
    auto probe = build_model(data, features, config, base.get(), pretrained.get());
    model_config = probe->config.to_json();
    graph = std::make_unique<GraphData>(prepare_graph(*probe, data.slice.database));
    make = [&data, &graph, &train, features, config, pretrained,
            base = std::shared_ptr<BaseBundle>(std::move(base))]() -> std::unique_ptr<Predictor> {
      auto m = build_model(data, features, config, base.get(), pretrained.get());
      return std::make_unique<DimePredictor>(std::move(m), *graph, train.sampling);
    };
  }

  json tried = json::array();
  if (lr_search) {
    auto grid = search_learning_rate(make, data.train, data.valid, train, kLearningRateGrid);
    predictor = std::move(grid.predictor);
    result = grid.result;
    for (const auto& [lr, metric] : grid.tried) tried.push_back({{"lr", lr}, {"valid_metric", metric}});
    for (const auto& e : result.curve) on_epoch(e);
  } else {
    predictor = make();
    result = train_task(*predictor, data.train, data.valid, train, on_epoch);
  }
  train.lr = result.lr;

  fs::create_directories(dir);
  std::string model_id;
  if (auto* base = dynamic_cast<BasePredictor*>(predictor.get())) {
    base->bundle().save(dir / "model.ckpt");
    model_id = base->bundle().id;
    if (cfg.value("register", false) && !from_pool) pool->register_model(base->bundle(), {{"task_sig", sig}});
    if (cfg.contains("registry")) {
      const fs::path registry_path = need_string(cfg, "registry", "--registry");
      auto registry = PerfRegistry::load(registry_path);
      registry.update_ema(model_id, sig, metric_score(type, result.best_metric), get_or(cfg, "beta", 0.9));
      registry.save(registry_path);
    }
  } else {
    static_cast<DimePredictor&>(*predictor).model().save(dir / "model.ckpt", {{"train", train.to_json()}});
  }

  json config = {{"kind", kind}, {"model", model_config}, {"train", train.to_json()}};
  if (base_id) config["base_id"] = *base_id;
  if (!model_id.empty()) config["model_id"] = model_id;
  json run = {{"kind", kind},
              {"checkpoint", "model.ckpt"},
              {"task", task_profile_to_json(data.task)},
              {"profile", data_profile_to_json(p.profile)},
              {"train", train.to_json()},
              {"config", config},
              {"data_hash", p.data_hash},
              {"best_epoch", result.best_epoch},
              {"best_metric", result.best_metric}};
  write_text(dir / "run.json", run.dump(2) + "\n");

  json report = {{"task_sig", sig},
                 {"best_epoch", result.best_epoch},
                 {"metric", result.best_metric},
                 {"metric_name", metric_name(type)},
                 {"epochs", result.curve.size()},
                 {"config", config}};
  if (lr_search) report["lr_search"] = tried;
  if (!p.warnings.empty()) report["warnings"] = p.warnings;
  write_text(dir / "train.json", report.dump(2) + "\n");
  out << report.dump() << "\n";
  return 0;
}

int cmd_eval(const json& cfg, std::ostream& out) {
  auto r = load_run(cfg);
  const std::string split = get_or<std::string>(cfg, "split", "valid");
  const auto rows = split_rows(r.data(), split);
  const auto ev = evaluate(*r.predictor, rows, r.train.batch_size, r.train.seed + 1);
  json doc = {{"split", split},
              {"rows", rows.rows.size()},
              {"metric_name", metric_name(r.data().task.task_type)},
              {"metric", ev.metric},
              {"loss", ev.loss}};
  if (!r.prepared.warnings.empty()) doc["warnings"] = r.prepared.warnings;
  out << doc.dump() << "\n";
  return 0;
}

int cmd_predict(const json& cfg, std::ostream& out) {
  auto r = load_run(cfg);
  const std::string split = get_or<std::string>(cfg, "split", "test");
  const Table& target = r.data().slice.target();
  std::vector<std::size_t> rows;
  if (split == "every") {
    rows.resize(target.rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  } else {
    rows = split_rows(r.data(), split).rows;
  }
  const auto raw = predict_rows(*r.predictor, rows, r.train.batch_size, r.train.seed + 1);
  std::ostringstream csv;
  csv << "key,prediction\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", to_output(r.data().task.task_type, raw[i]));
    csv << csv_escape(row_key(target, rows[i])) << "," << buf << "\n";
  }
  if (cfg.contains("output")) {
    write_text(need_string(cfg, "output", "--output"), csv.str());
    out << json{{"rows", rows.size()}, {"output", cfg["output"]}}.dump() << "\n";
  } else {
    out << csv.str();
  }
  return 0;
}

std::vector<SlotImportance> importances_for(LoadedRun& r, std::span<const std::size_t> rows) {
  auto* dime = r.dime();
  if (!dime || !dime->model().config.use_fusion || rows.empty()) return {};
  return explain(*dime, rows, r.train.batch_size, r.train.seed + 1);
}

int cmd_explain(const json& cfg, std::ostream& out) {
  auto r = load_run(cfg);
  if (!r.dime()) throw Error(ErrorKind::kConfig, "explain needs an augmented model, not a base model");
  const auto rows = split_rows(r.data(), get_or<std::string>(cfg, "split", "test"));
  json slots = json::array();
  for (const auto& s : explain(*r.dime(), rows.rows, r.train.batch_size, r.train.seed + 1)) {
    slots.push_back({{"slot", s.slot}, {"mean", s.mean}, {"rows", s.rows}});
  }
  out << slots.dump(2) << "\n";
  return 0;
}

int cmd_report(const json& cfg, std::ostream& out) {
  auto r = load_run(cfg);
  const TaskData& data = r.data();
  const TaskType type = data.task.task_type;
  ReportInputs in;
  in.task = data.task;
  if (cfg.contains("decision")) in.decision = Decision::from_json(read_json(need_string(cfg, "decision", "--decision")));

  const std::string name = metric_name(type);
  for (const char* split : {"valid", "test"}) {
    const auto rows = split_rows(data, split);
    if (rows.rows.empty()) continue;
    in.metrics[std::string(split) + "_" + name] =
        evaluate(*r.predictor, rows, r.train.batch_size, r.train.seed + 1).metric;
  }

  const auto test = data.test.rows.empty() ? all_labeled(data).rows : data.test.rows;
  const auto raw = predict_rows(*r.predictor, test, r.train.batch_size, r.train.seed + 1);
  for (std::size_t i = 0; i < test.size(); ++i) {
    in.predictions.push_back({row_key(data.slice.target(), test[i]), to_output(type, raw[i])});
  }
  std::stable_sort(in.predictions.begin(), in.predictions.end(), [](const auto& a, const auto& b) {
    return a.prediction != b.prediction ? a.prediction > b.prediction : a.key < b.key;
  });
  in.predictions.resize(std::min<std::size_t>(in.predictions.size(), get_or<std::size_t>(cfg, "top_k", 10)));
  in.importances = importances_for(r, test);
  in.provenance = {{"data_hash", r.prepared.data_hash},
                   {"seed", r.train.seed},
                   {"config", r.run.at("config")},
                   {"slice", data.slice.provenance()}};

  std::unique_ptr<AgentClient> client;
  if (std::getenv("RELML_LLM_ENDPOINT")) {
    client = std::make_unique<HttpJsonClient>(HttpClientConfig::from_environment("RELML_LLM"));
  }
  auto doc = synthesize_report(in, client.get());
  for (const auto& w : r.prepared.warnings) doc.warnings.push_back(w);

  const fs::path dir = cfg.contains("out") ? fs::path(need_string(cfg, "out", "--out"))
                                           : fs::path(need_string(cfg, "model_dir", "--model"));
  const fs::path md = dir / (data.task.task_name + ".report.md");
  const fs::path js = dir / (data.task.task_name + ".report.json");
  write_text(md, doc.markdown);
  write_text(js, doc.json.dump(2) + "\n");
  out << json{{"markdown", md.string()}, {"json", js.string()}, {"warnings", doc.warnings}}.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

void error_document(std::ostream& err, std::string_view kind, const std::string& message,
                    const std::vector<Violation>& violations = {}) {
  json doc = {{"kind", kind}, {"message", message}};
  if (!violations.empty()) {
    json v = json::array();
    for (const auto& x : violations) v.push_back({{"path", x.path}, {"message", x.message}});
    doc["violations"] = std::move(v);
  }
  err << json{{"error", doc}}.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("relml: conditional relational augmentation of in-database predictive models", "relml");
  app.footer(kConfigHelp);
  app.require_subcommand(1);
  Settings settings;

  auto common = [&](CLI::App* cmd, bool task) {
    settings.add_config(cmd);
    settings.add(cmd, "--data", {"/data"}, 's', "dataset directory (schema.json plus CSV files)");
    if (task) {
      settings.add(cmd, "--task", {"/task"}, 's', "task profile JSON file");
      settings.add(cmd, "--profile", {"/profile"}, 's', "data profile JSON file (derived when absent)");
      settings.add(cmd, "--max-hops", {"/max_hops"}, 'u', "hops for the derived data profile (default 2)");
    }
    settings.add(cmd, "--seed", {"/seed"}, 'u', "seed for every section without its own");
  };
  auto model_flags = [&](CLI::App* cmd) {
    settings.add(cmd, "--dim", {"/model/dim"}, 'u', "embedding width");
    settings.add(cmd, "--encoder-depth", {"/model/encoder_depth"}, 'u', "tuple encoder blocks");
    settings.add(cmd, "--heads", {"/model/heads"}, 'u', "attention heads");
    settings.add(cmd, "--mp-layers", {"/model/mp_layers"}, 'u', "message-passing layers (0 disables)");
    settings.add(cmd, "--aggregator", {"/model/aggregator"}, 's', "sum, mean, max or min");
    settings.add(cmd, "--fusion", {"/model/use_fusion"}, 'b', "attention fusion on or off");
  };
  auto run_flags = [&](CLI::App* cmd) {
    settings.add_config(cmd);
    settings.add(cmd, "--data", {"/data"}, 's', "dataset directory");
    settings.add(cmd, "--model", {"/model_dir"}, 's', "directory written by `train`");
  };

  std::function<int(const json&, std::ostream&)> handler;
  auto bind = [&](CLI::App* cmd, int (*fn)(const json&, std::ostream&)) {
    cmd->callback([&handler, fn] { handler = fn; });
  };

  auto* ingest = app.add_subcommand("ingest", "load a dataset and print its catalog summary");
  settings.add_config(ingest);
  settings.add(ingest, "dir", {"/data"}, 's', "dataset directory")->required();
  bind(ingest, cmd_ingest);

  auto* profile = app.add_subcommand("profile", "validate or derive task and data profiles");
  profile->require_subcommand(1);
  auto* validate = profile->add_subcommand("validate", "validate a task profile (and data profile)");
  common(validate, true);
  bind(validate, cmd_profile_validate);
  auto* derive = profile->add_subcommand("derive", "derive the data profile and SQL fragments");
  common(derive, true);
  settings.add(derive, "--output", {"/output"}, 's', "write the data profile JSON here");
  bind(derive, cmd_profile_derive);

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic relational benchmark");
  settings.add_config(synth);
  settings.add(synth, "--out", {"/out"}, 's', "output directory");
  settings.add(synth, "--seed", {"/seed"}, 'u', "generator seed");
  settings.add(synth, "--customers", {"/synth/customers"}, 'u', "target rows");
  settings.add(synth, "--products", {"/synth/products"}, 'u', "product rows");
  settings.add(synth, "--extra-tables", {"/synth/extra_tables"}, 'u', "distractor tables referencing the target");
  settings.add(synth, "--signal", {"/synth/signal"}, 's', "label source: neighbor or target");
  settings.add(synth, "--task-type", {"/synth/task_type"}, 's', "classification or regression");
  bind(synth, cmd_synth);

  auto* disp = app.add_subcommand("dispatch", "score the model pool and decide deploy vs augment");
  common(disp, true);
  settings.add(disp, "--pool", {"/pool"}, 's', "model pool directory");
  settings.add(disp, "--registry", {"/registry"}, 's', "performance registry JSON");
  settings.add(disp, "--epsilon", {"/epsilon"}, 'd', "tolerance in [0, 1) (default 0.1)");
  settings.add(disp, "--beta", {"/beta"}, 'd', "EMA coefficient for --observe (default 0.9)");
  settings.add(disp, "--prior", {"/prior"}, 'd', "mu when the registry has no entry (default 0.5)");
  settings.add_map(disp, "--score", "/scores", "use id=score instead of proxy scoring (repeatable)");
  settings.add_map(disp, "--observe", "/observe", "fold id=score into the registry first (repeatable)");
  settings.add(disp, "--output", {"/output"}, 's', "write the decision JSON here");
  bind(disp, cmd_dispatch);

  auto* pretrain = app.add_subcommand("pretrain", "self-supervised pretraining of shared components");
  common(pretrain, true);
  model_flags(pretrain);
  settings.add(pretrain, "--out", {"/out"}, 's', "output directory");
  settings.add(pretrain, "--steps", {"/pretrain/steps"}, 'u', "optimizer steps");
  settings.add(pretrain, "--mask-rate", {"/pretrain/mask_rate"}, 'd', "attribute mask probability");
  bind(pretrain, cmd_pretrain);

  auto* train = app.add_subcommand("train", "train a model; prints one JSON line per epoch");
  common(train, true);
  model_flags(train);
  settings.add(train, "--out", {"/out"}, 's', "output directory (run.json, model.ckpt, train.json)");
  settings.add(train, "--kind", {"/kind"}, 's', "dime or base");
  settings.add(train, "--model-id", {"/model_id"}, 's', "id of a trained base model");
  settings.add(train, "--base-id", {"/base_id"}, 's', "pool model to augment");
  settings.add(train, "--decision", {"/decision"}, 's', "dispatcher decision JSON to follow");
  settings.add(train, "--pool", {"/pool"}, 's', "model pool directory");
  settings.add(train, "--register", {"/register"}, 'b', "add the trained base model to the pool");
  settings.add(train, "--registry", {"/registry"}, 's', "record the base model's validation score here");
  settings.add(train, "--beta", {"/beta"}, 'd', "EMA coefficient (default 0.9)");
  settings.add(train, "--pretrained", {"/pretrained"}, 's', "checkpoint from `pretrain`; shared parts frozen");
  settings.add(train, "--lr", {"/train/lr"}, 'd', "learning rate");
  settings.add(train, "--lr-search", {"/lr_search"}, 'b', "search the learning-rate grid");
  settings.add(train, "--batch-size", {"/train/batch_size"}, 'u', "minibatch size");
  settings.add(train, "--max-epochs", {"/train/max_epochs"}, 'u', "epoch limit");
  settings.add(train, "--patience", {"/train/patience"}, 'u', "early-stopping patience");
  settings.add(train, "--fanout", {"/train/fanout"}, 'l', "neighbors per hop, e.g. 16,16");
  settings.add(train, "--sampling", {"/train/sampling"}, 's', "uniform or latest");
  bind(train, cmd_train);

  auto* eval = app.add_subcommand("eval", "evaluate a trained model on a split");
  run_flags(eval);
  settings.add(eval, "--split", {"/split"}, 's', "train, valid (default), test or all");
  bind(eval, cmd_eval);

  auto* predict = app.add_subcommand("predict", "export predictions as CSV (key,prediction)");
  run_flags(predict);
  settings.add(predict, "--split", {"/split"}, 's', "train, valid, test (default), all or every");
  settings.add(predict, "--output", {"/output"}, 's', "CSV file (stdout when absent)");
  bind(predict, cmd_predict);

  auto* expl = app.add_subcommand("explain", "rank contextual signals by mean importance");
  run_flags(expl);
  settings.add(expl, "--split", {"/split"}, 's', "train, valid, test (default) or all");
  bind(expl, cmd_explain);

  auto* report = app.add_subcommand("report", "write <task>.report.md and <task>.report.json");
  run_flags(report);
  settings.add(report, "--decision", {"/decision"}, 's', "dispatcher decision JSON");
  settings.add(report, "--out", {"/out"}, 's', "output directory (default: the model directory)");
  settings.add(report, "--top-k", {"/top_k"}, 'u', "predictions listed (default 10)");
  bind(report, cmd_report);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  try {
    return handler(settings.resolve(), out);
  } catch (const ValidationError& e) {
    error_document(err, to_string(e.kind()), e.what(), e.violations());
    return 1;
  } catch (const Error& e) {
    error_document(err, to_string(e.kind()), e.what());
    return e.kind() == ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    error_document(err, "internal", e.what());
    return 1;
  }
}

}  // namespace relml::cli
