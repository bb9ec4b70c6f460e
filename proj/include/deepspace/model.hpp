#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "deepspace/dataset.hpp"
#include "deepspace/neuralcore.hpp"
#include "deepspace/schema.hpp"

namespace deepspace::model {

/// Degree given to inputs that must not connect anywhere and to outputs that are never read.
/// Larger than any neuron degree a model can have.
inline constexpr int kPlaceholderHigh = 1 << 20;

enum class HeadKind { Categorical, GaussianMixture, LogNormal, Pareto };

/// One attribute, or one geo digit, as seen by the network: a contiguous slice of inputs and
/// a contiguous slice of outputs.
struct Block {
  std::size_t attribute = 0;
  int geo_level = 0;  // 1..L for geo digit blocks, 0 otherwise
  int input_offset = 0;
  int input_width = 0;
  int output_offset = 0;
  int output_width = 0;
  HeadKind head = HeadKind::Categorical;
  int categories = 0;  // Categorical heads
  int components = 0;  // GaussianMixture / LogNormal heads
  double pareto_beta = 0.0;

  bool is_geo() const { return geo_level > 0; }
};

/// Counts per degree proportional to the degree, rounded by largest remainder, placed contiguously
/// in ascending degree order. Degrees are 1..max_degree. When the layer has fewer neurons than
/// max_degree a warning is appended to `warnings` (if given).
std::vector<int> assign_hidden_degrees(int layer_size, int max_degree,
                                       std::vector<std::string>* warnings = nullptr);

struct BlockIndexing {
  std::vector<Block> blocks;  // schema order, geo expanded to L consecutive blocks coarse to fine
  std::vector<std::vector<int>> hidden_degrees;
  int max_degree = 0;  // blocks - 1
  int input_width = 0;
  int output_width = 0;
  std::size_t first_geo_block = 0;
  int geo_levels = 0;
  std::vector<std::string> warnings;

  static BlockIndexing build(const data::AttributeSchema& schema, const std::vector<int>& hidden_sizes);
  std::size_t block_count() const { return blocks.size(); }
  std::size_t geo_block(int level) const { return first_geo_block + static_cast<std::size_t>(level - 1); }
  /// Block of a non-geo attribute.
  std::size_t attribute_block(std::size_t attribute) const;
};

/// A conditioning/target split and the per-block degrees it induces.
///
/// Conditioned blocks (S) take input degrees 1..|S| in block order and are never read as outputs.
/// Non-geo targets are disconnected on the input side and read at output degree |S|+1. Geo digits
/// form a chain: the first `geo_depth` digits are conditioned, the remaining digits are targets
/// whose input and output degree is |S| + (level - geo_depth), so each target digit sees S and the
/// coarser target digits only.
struct OrderingSample {
  std::vector<bool> conditioned;  // per block
  int geo_depth = 0;
  std::vector<int> input_degree;
  std::vector<int> output_degree;

  /// `nongeo_conditioned` is indexed by block; its geo entries are ignored (geo_depth decides).
  static OrderingSample make(const BlockIndexing& indexing, const std::vector<bool>& nongeo_conditioned,
                             int geo_depth);
  int conditioned_count() const;
  bool is_target(std::size_t block) const { return !conditioned[block]; }
};

/// One mask per layer: input -> hidden, hidden -> hidden ..., hidden -> output. The presence
/// columns (the trailing block_count columns of every layer) are always connected.
std::vector<nn::Matrix> build_masks(const BlockIndexing& indexing, const OrderingSample& ordering);

struct CategoricalParams {
  std::vector<double> log_probs;
};
struct MixtureParams {
  std::vector<double> log_weights;  // log softmax of the mixture logits
  std::vector<double> mu;
  std::vector<double> log_sigma;
};
struct ParetoParams {
  double log_alpha = 0.0;
  double beta = 1.0;
};
using HeadParams = std::variant<CategoricalParams, MixtureParams, ParetoParams>;

/// Interprets a block's raw outputs (lognormal heads yield a one-component mixture in log space).
HeadParams head_params(const Block& block, std::span<const double> outputs);

/// Observed value of a block: a category code, or a continuous value (standardized for Gaussian
/// and lognormal heads, raw for Pareto heads).
struct Observation {
  int code = -1;
  double value = 0.0;
};

/// Negative log-likelihood of one observation. Throws ArgumentError for a Pareto observation below
/// beta or an out-of-range category.
double head_nll(const HeadParams& params, const Observation& observed);

/// NLL and its gradient with respect to the block's raw outputs (written to `grad`, scaled by
/// `scale`).
double head_nll_gradient(const Block& block, std::span<const double> outputs, const Observation& observed,
                         double scale, std::span<double> grad);

struct ModelConfig {
  std::vector<int> hidden_sizes = {386, 386};
  std::uint64_t seed = 1;
};

/// Values known for a pass: per block a code (discrete and geo blocks, -1 if unknown) or the raw
/// value (continuous blocks, NaN if unknown).
struct Evidence {
  std::vector<int> codes;
  std::vector<double> values;

  explicit Evidence(std::size_t blocks = 0);
};

/// The masked autoregressive density model over an attribute schema.
class DensityModel {
 public:
  DensityModel() = default;
  DensityModel(data::AttributeSchema schema, ModelConfig config, std::vector<data::ContinuousStats> stats,
               std::uint64_t n_total);

  const data::AttributeSchema& schema() const { return schema_; }
  const ModelConfig& config() const { return config_; }
  const BlockIndexing& indexing() const { return indexing_; }
  const nn::MaskedNetwork& network() const { return network_; }
  nn::MaskedNetwork& network() { return network_; }
  const std::vector<data::ContinuousStats>& stats() const { return stats_; }
  std::uint64_t n_total() const { return n_total_; }
  void set_n_total(std::uint64_t n) { n_total_ = n; }

  /// Network input row for one observation under an ordering: conditioned blocks and geo target
  /// digits carry their values, non-geo targets are zero.
  void encode_inputs(const Evidence& evidence, const OrderingSample& ordering, std::span<double> row) const;
  void encode_presence(const OrderingSample& ordering, std::span<double> row) const;
  Evidence evidence_for_row(const data::EncodedDataset& ds, std::size_t row) const;
  Observation observation(const Evidence& evidence, std::size_t block) const;

  /// Raw outputs for a batch of evidence rows under one ordering.
  nn::Matrix forward(std::span<const Evidence> rows, const OrderingSample& ordering) const;
  /// Head parameters of every target block for one evidence row.
  std::vector<std::optional<HeadParams>> target_heads(const Evidence& row, const OrderingSample& ordering) const;

  struct LossAndGradient {
    double loss = 0.0;
    nn::Gradients gradients;
  };
  /// (B / (B - |S|)) * mean over rows of the summed target NLLs. Throws ArgumentError when the
  /// ordering has no targets.
  double batch_loss(const data::EncodedDataset& ds, std::span<const std::size_t> rows,
                    const OrderingSample& ordering) const;
  LossAndGradient loss_and_gradient(const data::EncodedDataset& ds, std::span<const std::size_t> rows,
                                    const OrderingSample& ordering) const;
  /// Same objective on explicit evidence rows (used by gradient checks).
  LossAndGradient loss_and_gradient(std::span<const Evidence> rows, const OrderingSample& ordering,
                                    bool with_gradient = true) const;

  /// Rounds every parameter to float precision, the precision the serialized model stores.
  void round_to_storage_precision();

  /// Connections that are enabled under at least one ordering; the serialized model stores only
  /// these weights.
  std::vector<nn::Matrix> static_masks() const;

 private:
  data::AttributeSchema schema_;
  ModelConfig config_;
  BlockIndexing indexing_;
  nn::MaskedNetwork network_;
  std::vector<data::ContinuousStats> stats_;
  std::uint64_t n_total_ = 0;
};

/// Versioned binary container; see docs/model_format.md. Weights are stored as float.
std::vector<std::uint8_t> serialize(const DensityModel& model);
/// Throws FormatError (with the byte offset) on bad magic, version, checksum or truncation.
DensityModel deserialize(std::span<const std::uint8_t> bytes);

void save(const DensityModel& model, const std::string& path);
DensityModel load(const std::string& path);

}  // namespace deepspace::model
