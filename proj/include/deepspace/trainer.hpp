#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "json.hpp"

#include "deepspace/dataset.hpp"
#include "deepspace/model.hpp"

namespace deepspace::train {

struct TrainConfig {
  std::vector<int> hidden_sizes = {386, 386};
  double learning_rate = 1e-4;
  int batch_size = 1024;
  int max_epochs = 300;
  int patience = 20;
  std::uint64_t seed = 1;
  int probe_orderings = 64;
  std::size_t probe_rows = 50000;
  double min_improvement = 1e-4;

  /// Throws ConfigError unless every field is positive and patience < max_epochs.
  void validate() const;
  /// Reads any subset of the fields above (snake_case keys); unknown keys are a ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;  // mean normalized loss over the epoch's minibatches
  double probe_nll = 0.0;  // normalized loss under the fixed probe orderings
  double elapsed_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  int stopped_epoch = 0;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

struct TrainResult {
  model::DensityModel model;
  TrainReport report;
};

/// Uniform geo prefix depth in 0..L, each non-geo block conditioned with probability 1/2; draws
/// that leave no target are redrawn.
model::OrderingSample sample_ordering(const model::BlockIndexing& indexing, std::mt19937_64& rng);

/// Normalized loss of one batch under one ordering.
double batch_loss(const model::DensityModel& model, const data::EncodedDataset& ds,
                  std::span<const std::size_t> rows, const model::OrderingSample& ordering);

using ProgressCallback = std::function<void(const EpochRecord&)>;

/// Adam on minibatches with one fresh ordering each; early stopping on the probe loss. Returns
/// the best snapshot rounded to storage precision. Throws DataError for an empty dataset and
/// NumericError (with the batch, ordering and learning rate) on a non-finite loss.
TrainResult train(const data::EncodedDataset& ds, const TrainConfig& config, const ProgressCallback& progress = {});

}  // namespace deepspace::train
