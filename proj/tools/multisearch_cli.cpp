// SPDX-License-Identifier: Apache-2.0
//
// Command-line interface: corpus ingestion, index search, batch rollouts
// with advantage export, EM/F1/CEM evaluation, and SNR judging.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "multisearch/multisearch.hpp"

namespace {

using namespace multisearch;

std::vector<std::vector<std::string>> load_scripts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scripts file: " + path.string());
  nlohmann::json parsed;
  in >> parsed;
  if (!parsed.is_array()) throw std::runtime_error("scripts file must be a JSON array");
  std::vector<std::vector<std::string>> scripts;
  for (const auto& entry : parsed) {
    if (entry.is_string()) {
      scripts.push_back({entry.get<std::string>()});
    } else if (entry.is_array()) {
      scripts.push_back(entry.get<std::vector<std::string>>());
    } else {
      throw std::runtime_error("script entries must be strings or arrays of strings");
    }
  }
  if (scripts.empty()) throw std::runtime_error("scripts file is empty");
  return scripts;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct BackendOptions {
  std::string backend = "http";
  std::string scripts_path;
  std::string endpoint;
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string path = "/v1/chat/completions";
  double timeout_seconds = 60.0;
  int max_retries = 3;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--backend", backend, "Generation backend: scripted or http")
        ->check(CLI::IsMember({"scripted", "http"}));
    cmd->add_option("--scripts", scripts_path,
                    "JSON file with canned responses (scripted backend)");
    cmd->add_option("--endpoint", endpoint, "Base URL of the chat-completions endpoint");
    cmd->add_option("--model", model, "Model name sent to the endpoint");
    cmd->add_option("--api-key-env", api_key_env,
                    "Environment variable holding the API key");
    cmd->add_option("--endpoint-path", path, "Request path on the endpoint");
    cmd->add_option("--timeout", timeout_seconds, "Request timeout in seconds");
    cmd->add_option("--retries", max_retries, "Transient-failure retries");
  }

  // keyed_by_question: evaluation hands each question its own script;
  // rollout keys scripts by rollout index so every group replays the same set.
  PolicyProvider make_provider(bool keyed_by_question) const {
    if (backend == "scripted") {
      if (scripts_path.empty()) {
        throw std::runtime_error("--scripts is required with --backend scripted");
      }
      auto scripts = std::make_shared<std::vector<std::vector<std::string>>>(
          load_scripts(scripts_path));
      return [scripts, keyed_by_question](std::size_t qi, std::size_t ri) {
        const std::size_t key = keyed_by_question ? qi : ri;
        return std::static_pointer_cast<PolicyBackend>(
            std::make_shared<ScriptedPolicy>((*scripts)[key % scripts->size()]));
      };
    }
    if (endpoint.empty()) {
      throw std::runtime_error("--endpoint is required with --backend http");
    }
    HttpPolicyConfig config;
    config.endpoint.base_url = endpoint;
    config.endpoint.api_key_env = api_key_env;
    config.endpoint.timeout_seconds = timeout_seconds;
    config.endpoint.max_retries = max_retries;
    config.path = path;
    config.model = model;
    auto backend_ptr = std::make_shared<HttpPolicy>(config);
    return [backend_ptr](std::size_t, std::size_t) {
      return std::static_pointer_cast<PolicyBackend>(backend_ptr);
    };
  }
};

void print_report(const std::string& dataset_name, const EvalResult& result) {
  std::printf("%-24s %8s %8s %8s %8s %8s\n", "dataset", "em", "f1", "cem", "turns", "n");
  std::printf("%-24s %8.3f %8.3f %8.3f %8.2f %8zu\n", dataset_name.c_str(),
              result.report.em, result.report.f1, result.report.cem,
              result.mean_search_turns, result.report.n);
}

int run(int argc, char** argv) {
  CLI::App app{"MultiSearch deep-search agent environment"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "Key-value configuration file");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a corpus and write an index snapshot");
  std::string ingest_corpus_path;
  std::string ingest_out;
  ingest->add_option("corpus", ingest_corpus_path, "Line-delimited corpus file")->required();
  ingest->add_option("--out", ingest_out, "Index snapshot path")->required();

  // search
  auto* search = app.add_subcommand("search", "Query an index snapshot");
  std::string search_index;
  std::vector<std::string> search_queries;
  std::size_t search_k = 3;
  search->add_option("index", search_index, "Index snapshot path")->required();
  search->add_option("--query", search_queries, "Query text (repeat for multi-query)")
      ->required();
  search->add_option("--k", search_k, "Results per query");

  // rollout
  auto* rollout_cmd = app.add_subcommand(
      "rollout", "Sample rollout groups and export advantages");
  std::string rollout_index_path;
  std::string rollout_dataset;
  std::string rollout_out;
  std::string rollout_manifest;
  std::string rollout_algo = "gdpo";
  std::string rollout_prompt_template;
  std::size_t rollout_group_size = 0;
  std::size_t rollout_max_turns = 0;
  std::size_t rollout_limit = 0;
  BackendOptions rollout_backend;
  rollout_cmd->add_option("index", rollout_index_path)->required();
  rollout_cmd->add_option("dataset", rollout_dataset)->required();
  rollout_cmd->add_option("--out", rollout_out, "Advantage records output")->required();
  rollout_cmd->add_option("--manifest", rollout_manifest, "Run manifest output");
  rollout_cmd->add_option("--algo", rollout_algo, "Advantage algorithm")
      ->check(CLI::IsMember({"gdpo", "grpo"}));
  rollout_cmd->add_option("--group-size", rollout_group_size, "Rollouts per question");
  rollout_cmd->add_option("--max-turns", rollout_max_turns, "Search-turn budget");
  rollout_cmd->add_option("--limit", rollout_limit, "Use only the first N questions");
  rollout_cmd->add_option("--prompt-template", rollout_prompt_template,
                          "Prompt template file with a {question} placeholder");
  rollout_backend.add_to(rollout_cmd);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Run EM/F1/CEM evaluation");
  std::string eval_index_path;
  std::string eval_dataset;
  std::string eval_out;
  std::string eval_metrics = "em,f1,cem";
  std::string eval_prompt_template;
  std::size_t eval_limit = 0;
  BackendOptions eval_backend;
  eval_cmd->add_option("index", eval_index_path)->required();
  eval_cmd->add_option("dataset", eval_dataset)->required();
  eval_cmd->add_option("--metrics", eval_metrics, "Comma-separated metric list");
  eval_cmd->add_option("--out", eval_out, "JSON report output");
  eval_cmd->add_option("--limit", eval_limit, "Use only the first N questions");
  eval_cmd->add_option("--prompt-template", eval_prompt_template,
                       "Prompt template file with a {question} placeholder");
  eval_backend.add_to(eval_cmd);

  // snr
  auto* snr_cmd = app.add_subcommand("snr", "Judge signal-to-noise ratios");
  std::string snr_config_path;
  std::string snr_rows_path;
  std::string snr_out;
  snr_cmd->add_option("judge-config", snr_config_path, "Judge backend key-value file")
      ->required();
  snr_cmd->add_option("rows", snr_rows_path,
                      "JSONL rows with question, documents, content")
      ->required();
  snr_cmd->add_option("--out", snr_out, "JSONL output with snr per row");

  CLI11_PARSE(app, argc, argv);

  HarnessConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);

  if (*ingest) {
    const Corpus corpus = ingest_corpus(ingest_corpus_path);
    const InvertedIndex index = build_index(corpus);
    save_index(index, ingest_out);
    std::printf("indexed %zu documents (avg length %.2f) -> %s\n", index.total_docs(),
                index.avg_doc_length, ingest_out.c_str());
    return 0;
  }

  if (*search) {
    const InvertedIndex index = load_index(search_index);
    if (search_queries.size() == 1) {
      const auto results = bm25_search(index, search_queries[0], search_k,
                                       cfg.rollout.retriever.bm25_k1,
                                       cfg.rollout.retriever.bm25_b);
      for (const ScoredDoc& doc : results) {
        std::printf("%-12s %10.4f  %s\n", doc.doc_id.c_str(), doc.score,
                    index.find(doc.doc_id)->title.c_str());
      }
    } else {
      RetrieverConfig rc = cfg.rollout.retriever;
      rc.top_k = search_k;
      const auto docs = multi_query_search(index, search_queries, rc);
      for (std::size_t i = 0; i < docs.size(); ++i) {
        std::printf("Doc %zu  %-12s %s\n", i + 1, docs[i].id.c_str(),
                    docs[i].title.c_str());
      }
    }
    return 0;
  }

  if (*rollout_cmd) {
    if (rollout_group_size > 0) cfg.rollout.group_size = rollout_group_size;
    if (rollout_max_turns > 0) cfg.rollout.max_turns = rollout_max_turns;
    cfg.algo = rollout_algo == "grpo" ? Algo::Grpo : Algo::Gdpo;
    if (!rollout_prompt_template.empty()) {
      cfg.rollout.prompt_template = read_file(rollout_prompt_template);
    }
    const InvertedIndex index = load_index(rollout_index_path);
    std::vector<DatasetRecord> dataset = load_dataset(rollout_dataset);
    if (rollout_limit > 0 && rollout_limit < dataset.size()) {
      dataset.resize(rollout_limit);
    }
    const PolicyProvider provider =
        rollout_backend.make_provider(/*keyed_by_question=*/false);
    BatchResult result = rollout_batch(provider, index, dataset, cfg, rollout_out);
    result.manifest.dataset_name = rollout_dataset;
    result.manifest.index_id = rollout_index_path;
    result.manifest.backend_name = rollout_backend.backend;
    if (!rollout_manifest.empty()) {
      std::ofstream out(rollout_manifest);
      out << result.manifest.to_json().dump(2) << '\n';
    }
    std::printf("exported %zu advantage records -> %s\n", result.records.size(),
                rollout_out.c_str());
    std::printf("mean rewards: ans %.4f  query %.4f  merge %.4f\n",
                result.manifest.mean_rewards.ans, result.manifest.mean_rewards.query,
                result.manifest.mean_rewards.merge);
    return 0;
  }

  if (*eval_cmd) {
    if (!eval_prompt_template.empty()) {
      cfg.rollout.prompt_template = read_file(eval_prompt_template);
    }
    const InvertedIndex index = load_index(eval_index_path);
    std::vector<DatasetRecord> dataset = load_dataset(eval_dataset);
    if (eval_limit > 0 && eval_limit < dataset.size()) dataset.resize(eval_limit);
    const PolicyProvider provider =
        eval_backend.make_provider(/*keyed_by_question=*/true);
    const EvalResult result = evaluate(provider, index, dataset, cfg);
    print_report(eval_dataset, result);
    if (!eval_out.empty()) {
      nlohmann::ordered_json report;
      RunManifest manifest;
      manifest.dataset_name = eval_dataset;
      manifest.index_id = eval_index_path;
      manifest.backend_name = eval_backend.backend;
      manifest.seed = cfg.seed;
      manifest.config = snapshot_config(cfg);
      manifest.metrics = result.report;
      manifest.mean_search_turns = result.mean_search_turns;
      manifest.questions = dataset.size();
      report["manifest"] = manifest.to_json();
      report["rows"] = nlohmann::ordered_json::array();
      for (const EvalRow& row : result.rows) {
        report["rows"].push_back({{"id", row.id},
                                  {"em", row.em},
                                  {"f1", row.f1},
                                  {"cem", row.cem},
                                  {"turns", row.turns},
                                  {"answer", row.answer},
                                  {"error", row.error}});
      }
      std::ofstream out(eval_out);
      out << report.dump(2) << '\n';
    }
    return 0;
  }

  if (*snr_cmd) {
    // Judge config is a small key-value file: backend, endpoint, model,
    // api_key_env, endpoint_path, scripts, template.
    BackendOptions judge;
    std::string template_path;
    {
      std::ifstream in(snr_config_path);
      if (!in) throw std::runtime_error("cannot open judge config: " + snr_config_path);
      std::string line;
      while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const auto trimmed = multisearch::detail::trim(line);
        if (trimmed.empty()) continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string_view::npos) {
          throw std::runtime_error("judge config expects key = value lines");
        }
        const std::string key{multisearch::detail::trim(trimmed.substr(0, eq))};
        const std::string value{multisearch::detail::trim(trimmed.substr(eq + 1))};
        if (key == "backend") {
          judge.backend = value;
        } else if (key == "endpoint") {
          judge.endpoint = value;
        } else if (key == "model") {
          judge.model = value;
        } else if (key == "api_key_env") {
          judge.api_key_env = value;
        } else if (key == "endpoint_path") {
          judge.path = value;
        } else if (key == "scripts") {
          judge.scripts_path = value;
        } else if (key == "template") {
          template_path = value;
        } else {
          throw std::runtime_error("unknown judge config key: " + key);
        }
      }
    }
    const std::string snr_template =
        template_path.empty() ? std::string(kSnrPromptTemplate) : read_file(template_path);
    const PolicyProvider provider = judge.make_provider(/*keyed_by_question=*/true);

    std::ifstream rows_in(snr_rows_path);
    if (!rows_in) throw std::runtime_error("cannot open rows file: " + snr_rows_path);
    std::ofstream out;
    if (!snr_out.empty()) out.open(snr_out);
    std::string line;
    std::size_t row_index = 0;
    while (std::getline(rows_in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const nlohmann::json row = nlohmann::json::parse(line);
      std::shared_ptr<PolicyBackend> backend = provider(row_index, 0);
      const double snr = snr_judge(row.value("question", ""), row.value("documents", ""),
                                   row.value("content", ""), *backend, snr_template);
      std::printf("row %zu: snr %.4f\n", row_index, snr);
      if (out.is_open()) {
        out << nlohmann::ordered_json{{"row", row_index}, {"snr", snr}}.dump() << '\n';
      }
      ++row_index;
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
}
