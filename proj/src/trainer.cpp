#include "deepspace/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "deepspace/errors.hpp"

namespace deepspace::train {

using nlohmann::json;

void TrainConfig::validate() const {
  if (hidden_sizes.empty()) throw ConfigError("hidden_sizes must not be empty");
  for (int h : hidden_sizes) {
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  }
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (patience < 1 || patience >= max_epochs) throw ConfigError("patience must be in [1, max_epochs)");
  if (probe_orderings < 1) throw ConfigError("probe_orderings must be positive");
  if (probe_rows < 1) throw ConfigError("probe_rows must be positive");
  if (!(min_improvement >= 0.0)) throw ConfigError("min_improvement must be non-negative");
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "hidden_sizes") {
        c.hidden_sizes = value.get<std::vector<int>>();
      } else if (key == "learning_rate") {
        c.learning_rate = value.get<double>();
      } else if (key == "batch_size") {
        c.batch_size = value.get<int>();
      } else if (key == "max_epochs") {
        c.max_epochs = value.get<int>();
      } else if (key == "patience") {
        c.patience = value.get<int>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "probe_orderings") {
        c.probe_orderings = value.get<int>();
      } else if (key == "probe_rows") {
        c.probe_rows = value.get<std::size_t>();
      } else if (key == "min_improvement") {
        c.min_improvement = value.get<double>();
      } else {
        throw ConfigError("unknown training config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

json TrainConfig::to_json() const {
  return json{{"hidden_sizes", hidden_sizes}, {"learning_rate", learning_rate},
              {"batch_size", batch_size},     {"max_epochs", max_epochs},
              {"patience", patience},         {"seed", seed},
              {"probe_orderings", probe_orderings}, {"probe_rows", probe_rows},
              {"min_improvement", min_improvement}};
}

json EpochRecord::to_json() const {
  return json{{"epoch", epoch}, {"nll", train_nll}, {"probe_nll", probe_nll}, {"elapsed", elapsed_seconds}};
}

model::OrderingSample sample_ordering(const model::BlockIndexing& indexing, std::mt19937_64& rng) {
  const std::size_t n = indexing.block_count();
  std::uniform_int_distribution<int> depth(0, indexing.geo_levels);
  std::bernoulli_distribution coin(0.5);
  std::vector<bool> flags(n, false);
  while (true) {
    const int d = depth(rng);
    std::size_t conditioned = static_cast<std::size_t>(d);
    for (std::size_t b = 0; b < n; ++b) {
      flags[b] = false;
      if (indexing.blocks[b].is_geo()) continue;
      flags[b] = coin(rng);
      if (flags[b]) ++conditioned;
    }
    if (conditioned < n) return model::OrderingSample::make(indexing, flags, d);
  }
}

double batch_loss(const model::DensityModel& model, const data::EncodedDataset& ds,
                  std::span<const std::size_t> rows, const model::OrderingSample& ordering) {
  return model.batch_loss(ds, rows, ordering);
}

namespace {

std::string describe(const model::OrderingSample& o) {
  std::ostringstream s;
  s << "S = {";
  bool first = true;
  for (std::size_t b = 0; b < o.conditioned.size(); ++b) {
    if (!o.conditioned[b]) continue;
    s << (first ? "" : ",") << b;
    first = false;
  }
  s << "}, geo depth " << o.geo_depth;
  return s.str();
}

// Probe rows are split round-robin over the probe orderings: row i is scored under ordering
// i mod count.
double probe_loss(const model::DensityModel& m, const data::EncodedDataset& ds, const std::vector<std::size_t>& rows,
                  const std::vector<model::OrderingSample>& orderings) {
  const std::size_t k = orderings.size();
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<std::size_t> group;
  for (std::size_t o = 0; o < k; ++o) {
    group.clear();
    for (std::size_t i = o; i < rows.size(); i += k) group.push_back(rows[i]);
    if (group.empty()) continue;
    total += m.batch_loss(ds, group, orderings[o]) * static_cast<double>(group.size());
    counted += group.size();
  }
  return total / static_cast<double>(counted);
}

}  // namespace

TrainResult train(const data::EncodedDataset& ds, const TrainConfig& config, const ProgressCallback& progress) {
  config.validate();
  if (ds.size() == 0) throw DataError("cannot train on an empty dataset");
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  model::ModelConfig mc;
  mc.hidden_sizes = config.hidden_sizes;
  mc.seed = config.seed;
  model::DensityModel m(ds.schema(), mc, ds.stats(), ds.size());
  TrainReport report;
  report.warnings = m.indexing().warnings;

  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::mt19937_64 probe_rng(config.seed + 1);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> probe_rows = order;
  std::shuffle(probe_rows.begin(), probe_rows.end(), probe_rng);
  probe_rows.resize(std::min(config.probe_rows, ds.size()));
  std::vector<model::OrderingSample> probes;
  for (int i = 0; i < config.probe_orderings; ++i) probes.push_back(sample_ordering(m.indexing(), probe_rng));

  nn::AdamConfig adam_config;
  adam_config.learning_rate = config.learning_rate;
  std::vector<std::size_t> sizes;
  for (auto span : m.network().parameters()) sizes.push_back(span.size());
  nn::AdamState adam(adam_config, sizes);

  double best = std::numeric_limits<double>::infinity();
  std::vector<nn::MaskedLayer> best_layers = m.network().layers();
  int since_best = 0;
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += batch) {
      const std::span<const std::size_t> rows(order.data() + lo, std::min(batch, order.size() - lo));
      const auto ordering = sample_ordering(m.indexing(), rng);
      model::DensityModel::LossAndGradient lg;
      try {
        lg = m.loss_and_gradient(ds, rows, ordering);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (" + describe(ordering) + "), learning rate " +
                           std::to_string(config.learning_rate));
      }
      const auto grads = nn::MaskedNetwork::gradient_spans(lg.gradients);
      const auto params = m.network().parameters();
      nn::adam_step(params, grads, adam);
      sum += lg.loss;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = sum / static_cast<double>(batches);
    try {
      rec.probe_nll = probe_loss(m, ds, probe_rows, probes);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " while scoring probe orderings after epoch " +
                         std::to_string(epoch) + ", learning rate " + std::to_string(config.learning_rate));
    }
    if (!std::isfinite(rec.train_nll) || !std::isfinite(rec.probe_nll)) {
      throw NumericError("non-finite loss after epoch " + std::to_string(epoch) + ", learning rate " +
                         std::to_string(config.learning_rate));
    }
    rec.elapsed_seconds = elapsed();
    report.epochs.push_back(rec);
    if (progress) progress(rec);
    report.stopped_epoch = epoch;

    if (rec.probe_nll < best - config.min_improvement) {
      best = rec.probe_nll;
      best_layers = m.network().layers();
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  m.network().layers() = std::move(best_layers);
  m.round_to_storage_precision();
  report.wall_seconds = elapsed();
  return TrainResult{std::move(m), std::move(report)};
}

}  // namespace deepspace::train
