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

#include "relml/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace relml {

using nlohmann::json;

std::string_view to_string(SignalPlacement s) { return s == SignalPlacement::kTarget ? "target" : "neighbor"; }

SignalPlacement parse_signal_placement(std::string_view text) {
  if (text == "target") return SignalPlacement::kTarget;
  if (text == "neighbor") return SignalPlacement::kNeighbor;
  throw Error(ErrorKind::kConfig, "unknown signal placement '" + std::string(text) + "'");
}

json SynthConfig::to_json() const {
  return {{"customers", customers},   {"products", products},       {"min_orders", min_orders},
          {"max_orders", max_orders}, {"extra_tables", extra_tables}, {"signal", to_string(signal)},
          {"task_type", to_string(task_type)}, {"preference", preference}, {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& doc) {
  SynthConfig c;
  c.customers = doc.value("customers", c.customers);
  c.products = doc.value("products", c.products);
  c.min_orders = doc.value("min_orders", c.min_orders);
  c.max_orders = doc.value("max_orders", c.max_orders);
  c.extra_tables = doc.value("extra_tables", c.extra_tables);
  c.signal = parse_signal_placement(doc.value("signal", std::string("neighbor")));
  const auto task = doc.value("task_type", std::string("classification"));
  if (task != "classification" && task != "regression") throw Error(ErrorKind::kConfig, "unknown task type '" + task + "'");
  c.task_type = task == "regression" ? TaskType::kRegression : TaskType::kClassification;
  c.preference = doc.value("preference", c.preference);
  c.seed = doc.value("seed", c.seed);
  if (c.customers < 2 || c.products < 2) throw Error(ErrorKind::kConfig, "need at least two customers and products");
  if (c.min_orders == 0 || c.min_orders > c.max_orders) throw Error(ErrorKind::kConfig, "need 1 <= min_orders <= max_orders");
  if (c.preference < 0.0 || c.preference > 1.0) throw Error(ErrorKind::kConfig, "preference must lie in [0, 1]");
  return c;
}

namespace {

double round4(double x) { return std::round(x * 1e4) / 1e4; }

json column(const std::string& name, const std::string& kind) { return {{"name", name}, {"kind", kind}}; }

json foreign(const std::string& name, const std::string& table, const std::string& key) {
  return {{"name", name}, {"kind", "categorical"}, {"fk", {{"table", table}, {"column", key}}}};
}

}  // namespace

SynthData generate_synthetic(const SynthConfig& config) {
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  json tables = json::array();
  tables.push_back({{"name", "customers"},
                    {"file", "customers.csv"},
                    {"columns",
                     {{{"name", "customer_id"}, {"kind", "categorical"}, {"pk", true}},
                      column("age", "numerical"),
                      column("region", "categorical"),
                      column("score", "numerical"),
                      {{"name", "as_of"}, {"kind", "timestamp"}, {"timestamp_role", "event"}},
                      column("label", "numerical")}}});
  tables.push_back({{"name", "products"},
                    {"file", "products.csv"},
                    {"columns",
                     {{{"name", "product_id"}, {"kind", "categorical"}, {"pk", true}},
                      column("price", "numerical"),
                      column("category", "categorical")}}});
  tables.push_back({{"name", "orders"},
                    {"file", "orders.csv"},
                    {"columns",
                     {{{"name", "order_id"}, {"kind", "categorical"}, {"pk", true}},
                      foreign("customer_id", "customers", "customer_id"),
                      foreign("product_id", "products", "product_id"),
                      column("quantity", "numerical"),
                      column("ts", "timestamp")}}});
  for (std::size_t k = 0; k < config.extra_tables; ++k) {
    const std::string name = "events" + std::to_string(k);
    tables.push_back({{"name", name},
                      {"file", name + ".csv"},
                      {"columns",
                       {{{"name", "event_id"}, {"kind", "categorical"}, {"pk", true}},
                        foreign("customer_id", "customers", "customer_id"),
                        column("value", "numerical"),
                        column("kind", "categorical"),
                        column("ts", "timestamp")}}});
  }

  SynthData out;
  out.database.catalog = parse_schema({{"tables", tables}});
  for (const auto& meta : out.database.catalog.tables) out.database.tables.push_back(Table{meta, {}});
  auto& customers = out.database.tables[0];
  auto& products = out.database.tables[1];
  auto& orders = out.database.tables[2];

  // Products: the first half is budget priced, the second half premium.
  const std::size_t budget = config.products / 2;
  const char* categories[] = {"home", "garden", "toys", "books"};
  std::vector<double> price(config.products);
  for (std::size_t p = 0; p < config.products; ++p) {
    price[p] = round4(p < budget ? 0.3 * unit(rng) : 0.7 + 0.3 * unit(rng));
    products.rows.push_back({"p" + std::to_string(p), price[p], std::string(categories[rng() % 4])});
  }

  const Timestamp start = from_civil({2022, 1, 1});
  const char* regions[] = {"north", "south", "east", "west"};
  std::size_t order_id = 0;
  for (std::size_t c = 0; c < config.customers; ++c) {
    const std::int64_t day = static_cast<std::int64_t>(rng() % 365);
    const Timestamp as_of{start.seconds + day * 86400};
    const bool premium = unit(rng) < 0.5;
    const std::size_t n_orders = config.min_orders + rng() % (config.max_orders - config.min_orders + 1);
    double total = 0.0;
    for (std::size_t k = 0; k < n_orders; ++k) {
      const bool follow = unit(rng) < config.preference;
      const bool pick_premium = follow ? premium : !premium;
      const std::size_t p = pick_premium ? budget + rng() % (config.products - budget) : rng() % budget;
      total += price[p];
      const Timestamp ts{as_of.seconds - static_cast<std::int64_t>(1 + rng() % 300) * 86400};
      orders.rows.push_back({"o" + std::to_string(order_id++), "c" + std::to_string(c), "p" + std::to_string(p),
                             static_cast<double>(1 + rng() % 5), ts});
    }
    const double mean_price = total / static_cast<double>(n_orders);
    const double score = round4(unit(rng));
    double label = 0.0;
    if (config.signal == SignalPlacement::kNeighbor) {
      label = config.task_type == TaskType::kClassification ? (mean_price > 0.5 ? 1.0 : 0.0) : round4(mean_price);
    } else {
      label = config.task_type == TaskType::kClassification ? (score > 0.5 ? 1.0 : 0.0) : score;
    }
    customers.rows.push_back({"c" + std::to_string(c), std::round(18.0 + 60.0 * unit(rng)),
                              std::string(regions[rng() % 4]), score, as_of, label});
  }
  for (std::size_t k = 0; k < config.extra_tables; ++k) {
    auto& events = out.database.tables[3 + k];
    const char* kinds[] = {"view", "click", "share"};
    for (std::size_t c = 0; c < config.customers; ++c) {
      const auto as_of = std::get<Timestamp>(customers.rows[c][4]);
      const std::size_t n = rng() % 4;
      for (std::size_t e = 0; e < n; ++e) {
        events.rows.push_back({"e" + std::to_string(events.rows.size()), "c" + std::to_string(c), round4(unit(rng)),
                               std::string(kinds[rng() % 3]),
                               Timestamp{as_of.seconds - static_cast<std::int64_t>(1 + rng() % 300) * 86400}});
      }
    }
  }
  for (std::size_t i = 0; i < out.database.tables.size(); ++i) {
    out.database.tables[i].meta.row_count = out.database.tables[i].rows.size();
    out.database.catalog.tables[i].row_count = out.database.tables[i].rows.size();
  }

  out.task.task_name = config.signal == SignalPlacement::kNeighbor ? "premium_buyer" : "high_score";
  out.task.task_type = config.task_type;
  out.task.target_table = "customers";
  out.task.target_column = "label";
  return out;
}

void write_synthetic(const std::filesystem::path& dir, const SynthData& data) {
  write_dataset(dir, data.database);
  std::ofstream out(dir / "task.json");
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + (dir / "task.json").string());
  out << task_profile_to_json(data.task).dump(2) << "\n";
}

}  // namespace relml
