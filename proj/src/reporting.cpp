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

#include "relml/reporting.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace relml {

using nlohmann::json;

std::vector<SlotImportance> explain(const DimePredictor& predictor, std::span<const std::size_t> rows,
                                    std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw Error(ErrorKind::kConfig, "batch_size must be positive");
  const DimeModel& model = predictor.model();
  if (!model.config.use_fusion) throw Error(ErrorKind::kConfig, "importances need the fusion component");
  NoGradGuard guard;
  Rng rng(seed);
  std::map<std::string, std::pair<double, std::size_t>> totals;
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const auto batch = rows.subspan(start, std::min(batch_size, rows.size() - start));
    const auto out = forward(model, predictor.data(), predictor.sample(batch, rng), true);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto labels = slot_labels(model.relations, model.target_table, out.relations[i]);
      const auto scores = importance_scores(out.alpha[i]);
      for (std::size_t k = 0; k < labels.size(); ++k) {
        auto& t = totals[labels[k]];
        t.first += scores[k];
        ++t.second;
      }
    }
  }
  std::vector<SlotImportance> out;
  for (const auto& [slot, t] : totals) out.push_back({slot, t.first / static_cast<double>(t.second), t.second});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.mean > b.mean; });
  return out;
}

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string template_narrative(const ReportInputs& in) {
  std::ostringstream out;
  out << "Task `" << in.task.task_name << "` predicts `" << in.task.target_table << "." << in.task.target_column
      << "` (" << to_string(in.task.task_type) << ").";
  if (in.decision) {
    out << " The dispatcher selected `" << in.decision->selected << "` with proxy score "
        << fixed(in.decision->s_star) << " against threshold " << fixed(in.decision->tau) << " and chose to "
        << (in.decision->action == DispatchAction::kDeployBase ? "deploy the base model." : "augment it.");
  }
  for (const auto& [name, value] : in.metrics.items()) {
    if (value.is_number()) out << " " << name << ": " << fixed(value.get<double>()) << ".";
  }
  if (!in.importances.empty()) {
    out << " The strongest contextual signal is " << in.importances.front().slot << " (mean importance "
        << fixed(in.importances.front().mean) << ").";
  }
  return out.str();
}

}  // namespace

ReportDocument synthesize_report(const ReportInputs& in, AgentClient* client) {
  ReportDocument doc;
  json task = task_profile_to_json(in.task);
  json predictions = json::array();
  for (const auto& p : in.predictions) predictions.push_back({{"key", p.key}, {"prediction", p.prediction}});
  json importances = json::array();
  for (const auto& s : in.importances) importances.push_back({{"slot", s.slot}, {"mean", s.mean}, {"rows", s.rows}});

  std::string narrative = template_narrative(in);
  std::string source = "template";
  if (client) {
    json request = {{"task", task},
                    {"metrics", in.metrics},
                    {"importances", importances},
                    {"instruction", "Write a short analytical summary. Do not introduce new numbers."}};
    if (in.decision) request["decision"] = in.decision->to_json();
    try {
      narrative = client->complete(request);
      source = "llm";
    } catch (const std::exception& ex) {
      doc.warnings.push_back(std::string("narrative client failed, using template: ") + ex.what());
    }
  }

  doc.json = {{"task", task},
              {"decision", in.decision ? in.decision->to_json() : json()},
              {"metrics", in.metrics},
              {"predictions", predictions},
              {"importances", importances},
              {"narrative", {{"source", source}, {"text", narrative}}},
              {"provenance", in.provenance},
              {"warnings", doc.warnings}};

  std::ostringstream md;
  md << "# Report: " << in.task.task_name << "\n\n";
  md << "## Task\n\n";
  md << "- target: `" << in.task.target_table << "." << in.task.target_column << "`\n";
  md << "- type: " << to_string(in.task.task_type) << "\n";
  if (in.task.prediction_horizon) md << "- horizon: " << *in.task.prediction_horizon << "\n";
  md << "\n## Dispatcher\n\n";
  if (in.decision) {
    const auto& d = *in.decision;
    md << "| model | proxy score |\n|---|---|\n";
    for (const auto& [id, s] : d.scores) md << "| " << id << " | " << fixed(s) << " |\n";
    md << "\n- selected: `" << d.selected << "`\n";
    md << "- threshold: " << fixed(d.tau) << " (epsilon " << fixed(d.epsilon) << ", mu " << fixed(d.mu)
       << (d.mu_from_registry ? "" : ", prior") << ")\n";
    md << "- action: " << to_string(d.action) << "\n";
  } else {
    md << "No dispatcher decision recorded.\n";
  }
  md << "\n## Metrics\n\n";
  for (const auto& [name, value] : in.metrics.items()) {
    md << "- " << name << ": " << (value.is_number() ? fixed(value.get<double>()) : value.dump()) << "\n";
  }
  md << "\n## Top predictions\n\n";
  if (in.predictions.empty()) {
    md << "None.\n";
  } else {
    md << "| key | prediction |\n|---|---|\n";
    for (const auto& p : in.predictions) md << "| " << p.key << " | " << fixed(p.prediction) << " |\n";
  }
  md << "\n## Contextual signal importance\n\n";
  if (in.importances.empty()) {
    md << "None.\n";
  } else {
    md << "| slot | mean importance | rows |\n|---|---|---|\n";
    for (const auto& s : in.importances) md << "| " << s.slot << " | " << fixed(s.mean) << " | " << s.rows << " |\n";
  }
  md << "\n## Narrative\n\n" << (source == "llm" ? kLlmNarrativeMarker : kTemplateNarrativeMarker) << "\n\n"
     << narrative << "\n";
  for (const auto& w : doc.warnings) md << "\n> warning: " << w << "\n";
  md << "\n## Provenance\n\n```json\n" << in.provenance.dump(2) << "\n```\n";
  doc.markdown = md.str();
  return doc;
}

}  // namespace relml
