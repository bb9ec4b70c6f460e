#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "deepspace/dataset.hpp"
#include "deepspace/errors.hpp"
#include "deepspace/evaluation.hpp"
#include "deepspace/model.hpp"
#include "deepspace/query_engine.hpp"
#include "deepspace/service.hpp"
#include "deepspace/synthetic.hpp"
#include "deepspace/trainer.hpp"

namespace {

using namespace deepspace;
using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  out << content;
}

data::EncodedDataset load_data(const std::string& path, const data::AttributeSchema& schema) {
  auto ds = data::load_csv(path, schema);
  if (ds.drops.total() > 0) {
    std::cerr << "dropped " << ds.drops.total() << " rows (parse " << ds.drops.parse_errors << ", out of domain "
              << ds.drops.out_of_domain << ", unknown category " << ds.drops.unknown_category << ", invalid value "
              << ds.drops.invalid_value << ")\n";
  }
  return ds;
}

int run_train(const std::string& schema_path, const std::string& data_path, const std::string& config_path,
              const std::string& out_path, bool quiet) {
  const auto schema = data::AttributeSchema::load(schema_path);
  const auto config = config_path.empty() ? train::TrainConfig{} : train::TrainConfig::from_json(read_json(config_path));
  const auto ds = load_data(data_path, schema);
  const auto result = train::train(ds, config, [&](const train::EpochRecord& r) {
    if (!quiet) std::cout << r.to_json().dump() << std::endl;
  });
  for (const auto& w : result.report.warnings) std::cerr << "warning: " << w << '\n';
  model::save(result.model, out_path);
  const json summary{{"model", out_path},
                     {"rows", ds.size()},
                     {"best_epoch", result.report.best_epoch},
                     {"stopped_epoch", result.report.stopped_epoch},
                     {"wall_seconds", result.report.wall_seconds},
                     {"bytes", model::serialize(result.model).size()}};
  std::cout << summary.dump() << std::endl;
  return 0;
}

int run_query(const std::string& model_path, const std::string& query_path) {
  const auto m = model::load(model_path);
  const query::QueryEngine engine(m);
  const auto q = query::parse_query(read_json(query_path));
  std::cout << service::result_to_json(engine.run(q)).dump() << std::endl;
  return 0;
}

int run_workload(const std::string& data_path, const std::string& schema_path, const std::string& model_path,
                 const std::string& config_path, std::uint64_t seed, const std::string& out_path) {
  data::AttributeSchema schema;
  if (!schema_path.empty()) {
    schema = data::AttributeSchema::load(schema_path);
  } else if (!model_path.empty()) {
    schema = model::load(model_path).schema();
  } else {
    throw ConfigError("workload needs --schema or --model to read the data");
  }
  const auto config = config_path.empty() ? eval::WorkloadConfig{} : eval::WorkloadConfig::from_json(read_json(config_path));
  const auto ds = load_data(data_path, schema);
  const auto w = eval::generate_workload(ds, config, seed);
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot write " + out_path);
  eval::save_workload(out, w);
  std::cerr << "wrote " << w.size() << " queries to " << out_path << '\n';
  return 0;
}

int run_eval(const std::string& model_path, const std::string& data_path, const std::string& config_path,
             const std::string& workload_path, const std::string& out_dir, const std::vector<double>& rates,
             std::uint64_t seed) {
  const auto m = model::load(model_path);
  const auto ds = load_data(data_path, m.schema());
  eval::Workload w;
  if (!workload_path.empty()) {
    std::ifstream in(workload_path);
    if (!in) throw ConfigError("cannot open " + workload_path);
    w = eval::load_workload(in);
  } else {
    const auto config =
        config_path.empty() ? eval::WorkloadConfig{} : eval::WorkloadConfig::from_json(read_json(config_path));
    w = eval::generate_workload(ds, config, seed);
  }
  const query::QueryEngine engine(m);
  std::vector<eval::Estimator> estimators{{"model", [&](const query::Query& q) { return engine.run(q).estimate; }}};
  std::vector<eval::StateSize> sizes{{"model", model::serialize(m).size()}};
  std::vector<eval::SampleEstimator> samples;
  samples.reserve(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i) samples.emplace_back(ds, rates[i], seed + 1 + i);
  for (const auto& s : samples) {
    std::ostringstream name;
    name << "sample " << s.rate() * 100.0 << "%";
    estimators.push_back({name.str(), [&s](const query::Query& q) { return s.estimate(q); }});
    sizes.push_back({name.str(), s.state_bytes()});
  }
  const auto report = eval::run_eval(w, estimators, sizes);
  std::filesystem::create_directories(out_dir);
  std::ostringstream csv, state, text;
  report.write_csv(csv);
  report.write_state_csv(state);
  report.write_text(text);
  write_file(out_dir + "/report.csv", csv.str());
  write_file(out_dir + "/state_size.csv", state.str());
  write_file(out_dir + "/report.txt", text.str());
  std::cout << text.str();
  return 0;
}

int run_serve(const std::string& model_path, const std::string& data_path, const std::string& listen) {
  auto m = model::load(model_path);
  std::optional<data::EncodedDataset> ds;
  if (!data_path.empty()) ds = load_data(data_path, m.schema());
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--listen expects HOST:PORT");
  const std::string host = listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("invalid port in --listen");
  }
  service::QueryService svc(std::move(m), std::move(ds));
  std::cerr << "listening on " << host << ':' << port << '\n';
  svc.listen(host, port);
  return 0;
}

int run_synth(std::size_t rows, std::uint64_t seed, const std::vector<int>& months, int levels,
              const std::string& out_path, const std::string& schema_out) {
  synth::SyntheticConfig config;
  config.rows = rows;
  config.seed = seed;
  config.months = months;
  std::ofstream out(out_path);
  if (!out) throw ConfigError("cannot write " + out_path);
  synth::write_csv(out, config);
  if (!schema_out.empty()) {
    write_file(schema_out, synth::synthetic_schema(levels, months.size() > 1).to_json().dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned spatial approximate query processing"};
  app.require_subcommand(1);

  std::string schema_path, data_path, config_path, out_path, model_path, query_path, workload_path, listen;
  std::uint64_t seed = 1;
  bool quiet = false;

  auto* train_cmd = app.add_subcommand("train", "Train a model on a CSV file");
  train_cmd->add_option("--schema", schema_path, "Schema JSON")->required();
  train_cmd->add_option("--data", data_path, "CSV data")->required();
  train_cmd->add_option("--config", config_path, "Training config JSON");
  train_cmd->add_option("--out", out_path, "Output model file")->required();
  train_cmd->add_flag("--quiet", quiet, "Suppress per-epoch progress records");

  auto* query_cmd = app.add_subcommand("query", "Answer one query");
  query_cmd->add_option("--model", model_path, "Model file")->required();
  query_cmd->add_option("--query", query_path, "Query JSON file")->required();

  std::vector<double> rates{0.001, 0.01, 0.1};
  auto* eval_cmd = app.add_subcommand("eval", "Compare the model with sampling baselines");
  eval_cmd->add_option("--model", model_path, "Model file")->required();
  eval_cmd->add_option("--data", data_path, "CSV data")->required();
  eval_cmd->add_option("--workload-config", config_path, "Workload config JSON");
  eval_cmd->add_option("--workload", workload_path, "Workload JSON lines (instead of generating one)");
  eval_cmd->add_option("--rates", rates, "Sampling rates")->delimiter(',');
  eval_cmd->add_option("--seed", seed, "Seed for workload and samples");
  eval_cmd->add_option("--out", out_path, "Report directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP query API");
  serve_cmd->add_option("--model", model_path, "Model file")->required();
  serve_cmd->add_option("--data", data_path, "CSV data for sampling baselines");
  serve_cmd->add_option("--listen", listen, "HOST:PORT")->default_val("127.0.0.1:8080");

  auto* workload_cmd = app.add_subcommand("workload", "Generate a query workload with exact truths");
  workload_cmd->add_option("--data", data_path, "CSV data")->required();
  workload_cmd->add_option("--schema", schema_path, "Schema JSON");
  workload_cmd->add_option("--model", model_path, "Model file (schema source)");
  workload_cmd->add_option("--config", config_path, "Workload config JSON");
  workload_cmd->add_option("--seed", seed, "Seed");
  workload_cmd->add_option("--out", out_path, "Output JSON lines")->required();

  std::size_t rows = 200000;
  std::vector<int> months{1};
  int levels = 13;
  std::string schema_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic taxi-like dataset");
  synth_cmd->add_option("--rows", rows, "Row count");
  synth_cmd->add_option("--seed", seed, "Seed")->default_val(20160101);
  synth_cmd->add_option("--months", months, "Months of 2016")->delimiter(',');
  synth_cmd->add_option("--levels", levels, "Geo levels of the emitted schema");
  synth_cmd->add_option("--out", out_path, "Output CSV")->required();
  synth_cmd->add_option("--schema-out", schema_out, "Also write the matching schema JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) return run_train(schema_path, data_path, config_path, out_path, quiet);
    if (*query_cmd) return run_query(model_path, query_path);
    if (*eval_cmd) return run_eval(model_path, data_path, config_path, workload_path, out_path, rates, seed);
    if (*serve_cmd) return run_serve(model_path, data_path, listen);
    if (*workload_cmd) return run_workload(data_path, schema_path, model_path, config_path, seed, out_path);
    if (*synth_cmd) return run_synth(rows, seed, months, levels, out_path, schema_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const SpecError& e) {
    std::cerr << "unsupported: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << e.code() << " error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
