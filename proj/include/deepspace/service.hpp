#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "deepspace/dataset.hpp"
#include "deepspace/evaluation.hpp"
#include "deepspace/model.hpp"
#include "deepspace/query_engine.hpp"

namespace deepspace::service {

struct Response {
  int status = 200;
  nlohmann::json body;
};

/// Deterministic JSON form of a query result, shared by the CLI and the HTTP service.
nlohmann::json result_to_json(const query::QueryResult& r);

/// HTTP handlers over one immutable model. When a dataset is supplied the service also answers
/// with uniform-sample baselines (comparison mode).
class QueryService {
 public:
  explicit QueryService(model::DensityModel model, std::optional<data::EncodedDataset> data = std::nullopt,
                        std::vector<double> sample_rates = {0.001, 0.01, 0.1}, std::uint64_t sample_seed = 7);

  bool comparison_mode() const { return data_ != nullptr; }
  const model::DensityModel& model() const { return *model_; }

  /// POST /query: {estimate, selectivity, log_selectivity, count, elapsed_ms[, breakdown]
  /// [, sample_estimates]}. 400 for malformed or invalid queries, 422 for unsupported
  /// aggregate/head combinations.
  Response handle_query(const std::string& body) const;
  /// POST /heatmap: {"level", "bbox": [min_lon, min_lat, max_lon, max_lat], "predicates",
  /// "aggregate"} -> {"cells": [{"tokens", "bounds", "estimate"[, "sample_estimates"]}],
  /// "elapsed_ms"}. 422 with "max_level" when the level exceeds the model's geo levels.
  Response handle_heatmap(const std::string& body) const;
  /// GET /schema: attributes, domain, geo levels, N_total and model metadata.
  Response handle_schema() const;
  Response handle_healthz() const;

  /// Blocks serving HTTP on host:port until stop() is called. Throws ArgumentError if the address
  /// cannot be bound.
  void listen(const std::string& host, int port);
  void stop();

 private:
  nlohmann::json sample_estimates(const query::Query& q) const;

  std::unique_ptr<model::DensityModel> model_;
  std::unique_ptr<query::QueryEngine> engine_;
  std::unique_ptr<data::EncodedDataset> data_;
  std::vector<eval::SampleEstimator> samples_;
  struct Server;
  std::shared_ptr<Server> server_;
};

}  // namespace deepspace::service
