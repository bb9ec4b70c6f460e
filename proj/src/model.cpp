#include "deepspace/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "deepspace/errors.hpp"
#include "deepspace/math.hpp"

namespace deepspace::model {

std::vector<int> assign_hidden_degrees(int layer_size, int max_degree, std::vector<std::string>* warnings) {
  if (layer_size < 1) throw ArgumentError("hidden layer size must be positive");
  if (max_degree < 1) throw ArgumentError("a model needs at least two blocks");
  if (layer_size < max_degree && warnings) {
    warnings->push_back("hidden layer of " + std::to_string(layer_size) + " neurons is smaller than " +
                        std::to_string(max_degree) + " degrees; high degrees get no neurons");
  }
  const double total = static_cast<double>(max_degree) * (max_degree + 1) / 2.0;
  std::vector<int> counts(static_cast<std::size_t>(max_degree));
  std::vector<std::pair<double, int>> remainders;
  int assigned = 0;
  for (int i = 1; i <= max_degree; ++i) {
    const double quota = layer_size * static_cast<double>(i) / total;
    const int whole = static_cast<int>(std::floor(quota));
    counts[static_cast<std::size_t>(i - 1)] = whole;
    assigned += whole;
    remainders.emplace_back(quota - whole, i);
  }
  // Largest remainder first; ties go to the higher degree.
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second > b.second;
  });
  for (int k = 0; assigned < layer_size; ++k, ++assigned) {
    counts[static_cast<std::size_t>(remainders[static_cast<std::size_t>(k)].second - 1)] += 1;
  }
  std::vector<int> degrees;
  degrees.reserve(static_cast<std::size_t>(layer_size));
  for (int i = 1; i <= max_degree; ++i) degrees.insert(degrees.end(), static_cast<std::size_t>(counts[i - 1]), i);
  return degrees;
}

BlockIndexing BlockIndexing::build(const data::AttributeSchema& schema, const std::vector<int>& hidden_sizes) {
  if (hidden_sizes.empty()) throw ConfigError("at least one hidden layer is required");
  BlockIndexing ix;
  int in = 0;
  int out = 0;
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const auto& attr = schema.attribute(a);
    if (attr.is_geo()) {
      ix.first_geo_block = ix.blocks.size();
      ix.geo_levels = attr.geo_levels();
      for (int k = 1; k <= ix.geo_levels; ++k) {
        Block b;
        b.attribute = a;
        b.geo_level = k;
        b.input_offset = in;
        b.input_width = 4;
        b.output_offset = out;
        b.output_width = 4;
        b.head = HeadKind::Categorical;
        b.categories = 4;
        in += 4;
        out += 4;
        ix.blocks.push_back(b);
      }
      continue;
    }
    Block b;
    b.attribute = a;
    b.input_offset = in;
    b.output_offset = out;
    if (attr.is_discrete()) {
      b.head = HeadKind::Categorical;
      b.categories = attr.cardinality();
      b.input_width = b.categories;
      b.output_width = b.categories;
    } else {
      const auto& c = attr.continuous();
      b.input_width = 1;
      switch (c.head) {
        case data::HeadType::Gaussian:
          b.head = HeadKind::GaussianMixture;
          b.components = c.components;
          b.output_width = 3 * c.components;
          break;
        case data::HeadType::LogNormal:
          b.head = HeadKind::LogNormal;
          b.components = 1;
          b.output_width = 3;
          break;
        case data::HeadType::Pareto:
          b.head = HeadKind::Pareto;
          b.pareto_beta = c.pareto_beta;
          b.output_width = 1;
          break;
      }
    }
    in += b.input_width;
    out += b.output_width;
    ix.blocks.push_back(b);
  }
  ix.input_width = in;
  ix.output_width = out;
  ix.max_degree = static_cast<int>(ix.blocks.size()) - 1;
  if (ix.max_degree < 1) throw ConfigError("the schema must yield at least two blocks");
  for (int size : hidden_sizes) {
    if (size < 1) throw ConfigError("hidden layer sizes must be positive");
    ix.hidden_degrees.push_back(assign_hidden_degrees(size, ix.max_degree, &ix.warnings));
  }
  return ix;
}

std::size_t BlockIndexing::attribute_block(std::size_t attribute) const {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].attribute == attribute && !blocks[b].is_geo()) return b;
  }
  throw ArgumentError("attribute " + std::to_string(attribute) + " has no non-geo block");
}

OrderingSample OrderingSample::make(const BlockIndexing& indexing, const std::vector<bool>& nongeo_conditioned,
                                    int geo_depth) {
  const std::size_t n = indexing.block_count();
  if (nongeo_conditioned.size() != n) throw ArgumentError("conditioning flags must cover every block");
  if (geo_depth < 0 || geo_depth > indexing.geo_levels) {
    throw ArgumentError("geo prefix depth " + std::to_string(geo_depth) + " outside [0, " +
                        std::to_string(indexing.geo_levels) + "]");
  }
  OrderingSample o;
  o.geo_depth = geo_depth;
  o.conditioned.resize(n);
  o.input_degree.assign(n, kPlaceholderHigh);
  o.output_degree.assign(n, kPlaceholderHigh);
  int s = 0;
  for (std::size_t b = 0; b < n; ++b) {
    const auto& blk = indexing.blocks[b];
    o.conditioned[b] = blk.is_geo() ? blk.geo_level <= geo_depth : static_cast<bool>(nongeo_conditioned[b]);
    if (o.conditioned[b]) o.input_degree[b] = ++s;
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (o.conditioned[b]) continue;
    const auto& blk = indexing.blocks[b];
    if (blk.is_geo()) {
      o.input_degree[b] = s + (blk.geo_level - geo_depth);
      o.output_degree[b] = o.input_degree[b];
    } else {
      o.output_degree[b] = s + 1;
    }
  }
  return o;
}

int OrderingSample::conditioned_count() const {
  return static_cast<int>(std::count(conditioned.begin(), conditioned.end(), true));
}

namespace {

// Connects input or lower-layer unit j to hidden unit i when the predicate holds; presence columns
// are always connected.
nn::Matrix hidden_mask(const std::vector<int>& unit_degrees, const std::vector<int>& source_degrees,
                       std::size_t presence) {
  const auto rows = static_cast<Eigen::Index>(unit_degrees.size());
  const auto main = static_cast<Eigen::Index>(source_degrees.size());
  nn::Matrix m(rows, main + static_cast<Eigen::Index>(presence));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < main; ++j) m(i, j) = unit_degrees[i] >= source_degrees[j] ? 1.0 : 0.0;
  }
  m.rightCols(static_cast<Eigen::Index>(presence)).setOnes();
  return m;
}

nn::Matrix output_mask(const std::vector<int>& output_degrees, const std::vector<int>& hidden, std::size_t presence) {
  const auto rows = static_cast<Eigen::Index>(output_degrees.size());
  const auto main = static_cast<Eigen::Index>(hidden.size());
  nn::Matrix m(rows, main + static_cast<Eigen::Index>(presence));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < main; ++j) m(i, j) = output_degrees[i] > hidden[j] ? 1.0 : 0.0;
  }
  m.rightCols(static_cast<Eigen::Index>(presence)).setOnes();
  return m;
}

std::vector<nn::Matrix> masks_from_degrees(const BlockIndexing& ix, const std::vector<int>& input_block_degree,
                                           const std::vector<int>& output_block_degree) {
  std::vector<int> in(static_cast<std::size_t>(ix.input_width));
  std::vector<int> out(static_cast<std::size_t>(ix.output_width));
  for (std::size_t b = 0; b < ix.blocks.size(); ++b) {
    const auto& blk = ix.blocks[b];
    std::fill_n(in.begin() + blk.input_offset, blk.input_width, input_block_degree[b]);
    std::fill_n(out.begin() + blk.output_offset, blk.output_width, output_block_degree[b]);
  }
  const std::size_t presence = ix.block_count();
  std::vector<nn::Matrix> masks;
  masks.push_back(hidden_mask(ix.hidden_degrees[0], in, presence));
  for (std::size_t l = 1; l < ix.hidden_degrees.size(); ++l) {
    masks.push_back(hidden_mask(ix.hidden_degrees[l], ix.hidden_degrees[l - 1], presence));
  }
  masks.push_back(output_mask(out, ix.hidden_degrees.back(), presence));
  return masks;
}

double categorical_nll(std::span<const double> logits, int code, double scale, std::span<double> grad) {
  if (code < 0 || code >= static_cast<int>(logits.size())) {
    throw ArgumentError("category code " + std::to_string(code) + " out of range");
  }
  const double lse = math::log_sum_exp(logits);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < logits.size(); ++i) grad[i] = scale * std::exp(logits[i] - lse);
    grad[static_cast<std::size_t>(code)] -= scale;
  }
  return lse - logits[static_cast<std::size_t>(code)];
}

// Raw outputs are (logit, mu, log_sigma) triples.
double mixture_nll(std::span<const double> out, int components, double x, double scale, std::span<double> grad) {
  const auto k = static_cast<std::size_t>(components);
  std::vector<double> logits(k), lp(k);
  for (std::size_t i = 0; i < k; ++i) logits[i] = out[3 * i];
  const double lse_w = math::log_sum_exp(logits);
  for (std::size_t i = 0; i < k; ++i) {
    const double mu = out[3 * i + 1];
    const double ls = out[3 * i + 2];
    const double z = (x - mu) * std::exp(-ls);
    lp[i] = logits[i] - lse_w - 0.5 * z * z - ls - math::kHalfLog2Pi;
  }
  const double logp = math::log_sum_exp(lp);
  if (!grad.empty()) {
    for (std::size_t i = 0; i < k; ++i) {
      const double r = std::exp(lp[i] - logp);
      const double w = std::exp(logits[i] - lse_w);
      const double mu = out[3 * i + 1];
      const double inv_var = std::exp(-2.0 * out[3 * i + 2]);
      const double d = x - mu;
      grad[3 * i] = scale * (w - r);
      grad[3 * i + 1] = scale * (-r * d * inv_var);
      grad[3 * i + 2] = scale * (-r * (d * d * inv_var - 1.0));
    }
  }
  return -logp;
}

double pareto_nll(double log_alpha, double beta, double x, double scale, std::span<double> grad) {
  if (!(x >= beta)) throw ArgumentError("Pareto observation below the scale parameter");
  const double alpha = std::exp(log_alpha);
  const double lx = std::log(x);
  const double lb = std::log(beta);
  if (!grad.empty()) grad[0] = scale * (-1.0 + alpha * (lx - lb));
  return -(log_alpha + alpha * lb - (alpha + 1.0) * lx);
}

}  // namespace

std::vector<nn::Matrix> build_masks(const BlockIndexing& indexing, const OrderingSample& ordering) {
  if (ordering.input_degree.size() != indexing.block_count()) {
    throw ArgumentError("ordering does not match the block layout");
  }
  return masks_from_degrees(indexing, ordering.input_degree, ordering.output_degree);
}

HeadParams head_params(const Block& block, std::span<const double> outputs) {
  if (static_cast<int>(outputs.size()) != block.output_width) throw ArgumentError("head output width mismatch");
  switch (block.head) {
    case HeadKind::Categorical: {
      CategoricalParams p;
      const double lse = math::log_sum_exp(outputs);
      for (double v : outputs) p.log_probs.push_back(v - lse);
      return p;
    }
    case HeadKind::GaussianMixture:
    case HeadKind::LogNormal: {
      MixtureParams p;
      std::vector<double> logits;
      for (int i = 0; i < block.components; ++i) logits.push_back(outputs[3 * i]);
      const double lse = math::log_sum_exp(logits);
      for (int i = 0; i < block.components; ++i) {
        p.log_weights.push_back(outputs[3 * i] - lse);
        p.mu.push_back(outputs[3 * i + 1]);
        p.log_sigma.push_back(outputs[3 * i + 2]);
      }
      return p;
    }
    case HeadKind::Pareto:
      return ParetoParams{outputs[0], block.pareto_beta};
  }
  throw ArgumentError("unknown head kind");
}

double head_nll(const HeadParams& params, const Observation& observed) {
  if (const auto* c = std::get_if<CategoricalParams>(&params)) {
    if (observed.code < 0 || observed.code >= static_cast<int>(c->log_probs.size())) {
      throw ArgumentError("category code out of range");
    }
    return -c->log_probs[static_cast<std::size_t>(observed.code)];
  }
  if (const auto* m = std::get_if<MixtureParams>(&params)) {
    std::vector<double> lp;
    for (std::size_t i = 0; i < m->mu.size(); ++i) {
      const double z = (observed.value - m->mu[i]) * std::exp(-m->log_sigma[i]);
      lp.push_back(m->log_weights[i] - 0.5 * z * z - m->log_sigma[i] - math::kHalfLog2Pi);
    }
    return -math::log_sum_exp(lp);
  }
  const auto& p = std::get<ParetoParams>(params);
  return pareto_nll(p.log_alpha, p.beta, observed.value, 1.0, {});
}

double head_nll_gradient(const Block& block, std::span<const double> outputs, const Observation& observed,
                         double scale, std::span<double> grad) {
  if (static_cast<int>(outputs.size()) != block.output_width ||
      (!grad.empty() && grad.size() != outputs.size())) {
    throw ArgumentError("head output width mismatch");
  }
  switch (block.head) {
    case HeadKind::Categorical:
      return categorical_nll(outputs, observed.code, scale, grad);
    case HeadKind::GaussianMixture:
    case HeadKind::LogNormal:
      return mixture_nll(outputs, block.components, observed.value, scale, grad);
    case HeadKind::Pareto:
      return pareto_nll(outputs[0], block.pareto_beta, observed.value, scale, grad);
  }
  throw ArgumentError("unknown head kind");
}

Evidence::Evidence(std::size_t blocks)
    : codes(blocks, -1), values(blocks, std::numeric_limits<double>::quiet_NaN()) {}

DensityModel::DensityModel(data::AttributeSchema schema, ModelConfig config, std::vector<data::ContinuousStats> stats,
                           std::uint64_t n_total)
    : schema_(std::move(schema)), config_(std::move(config)), stats_(std::move(stats)), n_total_(n_total) {
  indexing_ = BlockIndexing::build(schema_, config_.hidden_sizes);
  if (stats_.size() != schema_.size()) throw ArgumentError("one statistics entry per attribute required");
  const auto presence = static_cast<Eigen::Index>(indexing_.block_count());
  std::mt19937_64 rng(config_.seed);
  std::vector<nn::MaskedLayer> layers;
  Eigen::Index width = indexing_.input_width;
  for (int size : config_.hidden_sizes) {
    layers.push_back(nn::make_layer(width + presence, size, nn::Activation::Elu, rng));
    width = size;
  }
  layers.push_back(nn::make_layer(width + presence, indexing_.output_width, nn::Activation::Identity, rng));
  network_ = nn::MaskedNetwork(std::move(layers), presence);
  const auto masks = static_masks();
  for (std::size_t l = 0; l < masks.size(); ++l) {
    auto& layer = network_.layers()[l];
    layer.mask = masks[l];
    layer.weights = layer.weights.cwiseProduct(layer.mask);
  }
}

void DensityModel::encode_inputs(const Evidence& evidence, const OrderingSample& ordering,
                                 std::span<double> row) const {
  if (static_cast<int>(row.size()) != indexing_.input_width) throw ArgumentError("input row width mismatch");
  std::fill(row.begin(), row.end(), 0.0);
  for (std::size_t b = 0; b < indexing_.block_count(); ++b) {
    const auto& blk = indexing_.blocks[b];
    if (!ordering.conditioned[b] && !blk.is_geo()) continue;
    if (blk.head == HeadKind::Categorical) {
      const int code = evidence.codes[b];
      if (code >= 0 && code < blk.input_width) row[static_cast<std::size_t>(blk.input_offset + code)] = 1.0;
    } else {
      const double v = evidence.values[b];
      if (!std::isnan(v)) row[static_cast<std::size_t>(blk.input_offset)] = stats_[blk.attribute].standardize(v);
    }
  }
}

void DensityModel::encode_presence(const OrderingSample& ordering, std::span<double> row) const {
  if (row.size() != indexing_.block_count()) throw ArgumentError("presence row width mismatch");
  for (std::size_t b = 0; b < row.size(); ++b) row[b] = ordering.conditioned[b] ? 1.0 : 0.0;
}

Evidence DensityModel::evidence_for_row(const data::EncodedDataset& ds, std::size_t row) const {
  Evidence e(indexing_.block_count());
  const int levels = indexing_.geo_levels;
  const std::uint64_t index = ds.geo_index(row);
  for (std::size_t b = 0; b < indexing_.block_count(); ++b) {
    const auto& blk = indexing_.blocks[b];
    if (blk.is_geo()) {
      e.codes[b] = static_cast<int>((index >> (2 * (levels - blk.geo_level))) & 3U);
    } else if (blk.head == HeadKind::Categorical) {
      e.codes[b] = ds.code(row, blk.attribute);
    } else {
      e.values[b] = ds.value(row, blk.attribute);
    }
  }
  return e;
}

Observation DensityModel::observation(const Evidence& evidence, std::size_t block) const {
  const auto& blk = indexing_.blocks[block];
  Observation o;
  if (blk.head == HeadKind::Categorical) {
    o.code = evidence.codes[block];
    if (o.code < 0) throw ArgumentError("target block has no observed category");
    return o;
  }
  const double v = evidence.values[block];
  if (std::isnan(v)) throw ArgumentError("target block has no observed value");
  o.value = blk.head == HeadKind::Pareto ? v : stats_[blk.attribute].standardize(v);
  return o;
}

nn::Matrix DensityModel::forward(std::span<const Evidence> rows, const OrderingSample& ordering) const {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto presence = static_cast<Eigen::Index>(indexing_.block_count());
  nn::Matrix input(n, indexing_.input_width);
  nn::Matrix aux(n, presence);
  for (Eigen::Index r = 0; r < n; ++r) {
    encode_inputs(rows[static_cast<std::size_t>(r)], ordering,
                  std::span<double>(input.row(r).data(), static_cast<std::size_t>(input.cols())));
    encode_presence(ordering, std::span<double>(aux.row(r).data(), static_cast<std::size_t>(presence)));
  }
  const auto masks = build_masks(indexing_, ordering);
  return network_.forward(input, aux, nullptr, masks);
}

std::vector<std::optional<HeadParams>> DensityModel::target_heads(const Evidence& row,
                                                                  const OrderingSample& ordering) const {
  const nn::Matrix out = forward(std::span<const Evidence>(&row, 1), ordering);
  std::vector<std::optional<HeadParams>> heads(indexing_.block_count());
  for (std::size_t b = 0; b < heads.size(); ++b) {
    if (ordering.conditioned[b]) continue;
    const auto& blk = indexing_.blocks[b];
    heads[b] = head_params(blk, std::span<const double>(out.row(0).data() + blk.output_offset,
                                                        static_cast<std::size_t>(blk.output_width)));
  }
  return heads;
}

DensityModel::LossAndGradient DensityModel::loss_and_gradient(std::span<const Evidence> rows,
                                                              const OrderingSample& ordering,
                                                              bool with_gradient) const {
  const std::size_t blocks = indexing_.block_count();
  const int s = ordering.conditioned_count();
  if (s >= static_cast<int>(blocks)) throw ArgumentError("ordering has no target blocks");
  if (rows.empty()) throw ArgumentError("empty batch");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto presence = static_cast<Eigen::Index>(blocks);
  nn::Matrix input(n, indexing_.input_width);
  nn::Matrix aux(n, presence);
  for (Eigen::Index r = 0; r < n; ++r) {
    encode_inputs(rows[static_cast<std::size_t>(r)], ordering,
                  std::span<double>(input.row(r).data(), static_cast<std::size_t>(input.cols())));
    encode_presence(ordering, std::span<double>(aux.row(r).data(), static_cast<std::size_t>(presence)));
  }
  const auto masks = build_masks(indexing_, ordering);
  nn::ForwardCache cache;
  const nn::Matrix out = network_.forward(input, aux, with_gradient ? &cache : nullptr, masks);

  const double factor = static_cast<double>(blocks) / static_cast<double>(static_cast<int>(blocks) - s);
  const double scale = factor / static_cast<double>(n);
  nn::Matrix upstream;
  if (with_gradient) upstream = nn::Matrix::Zero(n, out.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& ev = rows[static_cast<std::size_t>(r)];
    for (std::size_t b = 0; b < blocks; ++b) {
      if (ordering.conditioned[b]) continue;
      const auto& blk = indexing_.blocks[b];
      const auto w = static_cast<std::size_t>(blk.output_width);
      std::span<const double> o(out.row(r).data() + blk.output_offset, w);
      std::span<double> g;
      if (with_gradient) g = std::span<double>(upstream.row(r).data() + blk.output_offset, w);
      total += head_nll_gradient(blk, o, observation(ev, b), scale, g);
    }
  }
  LossAndGradient result;
  result.loss = total * scale;
  if (!std::isfinite(result.loss)) throw NumericError("non-finite loss");
  if (with_gradient) result.gradients = network_.backward(cache, upstream, false);
  return result;
}

DensityModel::LossAndGradient DensityModel::loss_and_gradient(const data::EncodedDataset& ds,
                                                              std::span<const std::size_t> rows,
                                                              const OrderingSample& ordering) const {
  std::vector<Evidence> ev;
  ev.reserve(rows.size());
  for (auto r : rows) ev.push_back(evidence_for_row(ds, r));
  return loss_and_gradient(ev, ordering, true);
}

double DensityModel::batch_loss(const data::EncodedDataset& ds, std::span<const std::size_t> rows,
                                const OrderingSample& ordering) const {
  std::vector<Evidence> ev;
  ev.reserve(rows.size());
  for (auto r : rows) ev.push_back(evidence_for_row(ds, r));
  return loss_and_gradient(ev, ordering, false).loss;
}

void DensityModel::round_to_storage_precision() {
  for (auto span : network_.parameters()) {
    for (double& v : span) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<nn::Matrix> DensityModel::static_masks() const {
  // Smallest input degree and largest read output degree each block can take over all orderings.
  const std::size_t blocks = indexing_.block_count();
  const int b = static_cast<int>(blocks);
  std::vector<int> in(blocks), out(blocks);
  for (std::size_t i = 0; i < blocks; ++i) {
    const auto& blk = indexing_.blocks[i];
    in[i] = blk.is_geo() ? blk.geo_level : 1;
    out[i] = blk.is_geo() ? b - indexing_.geo_levels + blk.geo_level : b;
  }
  return masks_from_degrees(indexing_, in, out);
}

}  // namespace deepspace::model
