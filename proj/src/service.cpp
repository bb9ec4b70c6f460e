#include "deepspace/service.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "httplib.h"

#include "deepspace/errors.hpp"

namespace deepspace::service {

using nlohmann::json;

struct QueryService::Server {
  httplib::Server http;
};

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

Response error_response(int status, const std::string& code, const std::string& message) {
  return Response{status, json{{"error", code}, {"message", message}}};
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

template <typename Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const json::parse_error& e) {
    return error_response(400, "parse", e.what());
  } catch (const json::exception& e) {
    return error_response(400, "invalid_request", e.what());
  } catch (const SpecError& e) {
    return error_response(422, e.code(), e.what());
  } catch (const EmptyResultError& e) {
    return error_response(422, e.code(), e.what());
  } catch (const NumericError& e) {
    return error_response(500, e.code(), e.what());
  } catch (const Error& e) {
    return error_response(400, e.code(), e.what());
  }
}

}  // namespace

json result_to_json(const query::QueryResult& r) {
  json j{{"estimate", number(r.estimate)},
         {"selectivity", number(r.selectivity)},
         {"log_selectivity", number(r.log_selectivity)},
         {"count", number(r.count)}};
  if (!r.breakdown.empty()) {
    json parts = json::array();
    for (const auto& s : r.breakdown) {
      parts.push_back({{"cell", s.cell}, {"estimate", number(s.estimate)}, {"count", number(s.count)}});
    }
    j["breakdown"] = parts;
  }
  return j;
}

QueryService::QueryService(model::DensityModel model, std::optional<data::EncodedDataset> data,
                           std::vector<double> sample_rates, std::uint64_t sample_seed)
    : model_(std::make_unique<model::DensityModel>(std::move(model))),
      engine_(std::make_unique<query::QueryEngine>(*model_)) {
  if (data) {
    data_ = std::make_unique<data::EncodedDataset>(std::move(*data));
    for (std::size_t i = 0; i < sample_rates.size(); ++i) {
      samples_.emplace_back(*data_, sample_rates[i], sample_seed + i);
    }
  }
}

json QueryService::sample_estimates(const query::Query& q) const {
  json out = json::object();
  for (const auto& s : samples_) {
    std::ostringstream key;
    key << s.rate();
    out[key.str()] = number(s.estimate(q));
  }
  return out;
}

Response QueryService::handle_query(const std::string& body) const {
  return guarded([&] {
    const auto start = std::chrono::steady_clock::now();
    const auto q = query::parse_query(json::parse(body));
    const auto r = engine_->run(q);
    json j = result_to_json(r);
    if (comparison_mode()) j["sample_estimates"] = sample_estimates(q);
    j["elapsed_ms"] = elapsed_ms(start);
    return Response{200, j};
  });
}

Response QueryService::handle_heatmap(const std::string& body) const {
  return guarded([&]() -> Response {
    const auto start = std::chrono::steady_clock::now();
    const json req = json::parse(body);
    if (!req.is_object()) throw ArgumentError("heatmap request must be a JSON object");
    if (!req.contains("level") || !req.at("level").is_number_integer()) {
      throw ArgumentError("heatmap request requires an integer 'level'");
    }
    const int level = req.at("level").get<int>();
    const int max_level = model_->schema().geo_levels();
    if (level > max_level) {
      Response r = error_response(422, "level_too_deep",
                                  "level " + std::to_string(level) + " exceeds the model's maximum level");
      r.body["max_level"] = max_level;
      return r;
    }
    geo::Rect bbox = model_->schema().domain().rect();
    if (req.contains("bbox")) {
      const auto& b = req.at("bbox");
      if (!b.is_array() || b.size() != 4) throw ArgumentError("'bbox' must be [min_lon, min_lat, max_lon, max_lat]");
      bbox = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    }
    query::Query q;
    if (req.contains("predicates") || req.contains("aggregate")) {
      json qj = json::object();
      if (req.contains("predicates")) qj["predicates"] = req.at("predicates");
      if (req.contains("aggregate")) qj["aggregate"] = req.at("aggregate");
      q = query::parse_query(qj);
    }
    const auto cells = engine_->heatmap(level, bbox, q.predicates, q.aggregate);
    json out = json::array();
    for (const auto& c : cells) {
      json cell{{"tokens", c.cell.to_string()},
                {"bounds", {c.bounds.min_lon, c.bounds.min_lat, c.bounds.max_lon, c.bounds.max_lat}},
                {"estimate", number(c.estimate)}};
      if (comparison_mode()) {
        query::Query cq = q;
        cq.predicates.push_back(query::CellContains{c.cell});
        cell["sample_estimates"] = sample_estimates(cq);
      }
      out.push_back(std::move(cell));
    }
    return Response{200, json{{"cells", out}, {"elapsed_ms", elapsed_ms(start)}}};
  });
}

Response QueryService::handle_schema() const {
  const auto& schema = model_->schema();
  json attrs = json::array();
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const auto& spec = schema.attribute(a);
    json o{{"name", spec.name}};
    if (spec.is_geo()) {
      o["kind"] = "geo";
      o["levels"] = spec.geo_levels();
    } else if (spec.is_continuous()) {
      o["kind"] = "continuous";
      const auto& c = spec.continuous();
      o["head"] = c.head == data::HeadType::Gaussian    ? "gaussian"
                  : c.head == data::HeadType::LogNormal ? "lognormal"
                                                        : "pareto";
    } else {
      const bool datetime = std::holds_alternative<data::DatetimeKind>(spec.kind);
      o["kind"] = datetime ? "datetime" : "categorical";
      json labels = json::array();
      for (int k = 0; k < spec.cardinality(); ++k) labels.push_back(schema.discrete_value(a, k));
      o["categories"] = labels;
    }
    attrs.push_back(std::move(o));
  }
  const auto& d = schema.domain();
  json body{{"attributes", attrs},
            {"domain", {{"min_lon", d.min_lon}, {"min_lat", d.min_lat}, {"max_lon", d.max_lon}, {"max_lat", d.max_lat}}},
            {"geo_max_level", schema.geo_levels()},
            {"n_total", model_->n_total()},
            {"model",
             {{"hidden_sizes", model_->config().hidden_sizes},
              {"parameters", model_->network().parameter_count()},
              {"serialized_bytes", model::serialize(*model_).size()}}},
            {"comparison_mode", comparison_mode()}};
  if (comparison_mode()) {
    json rates = json::array();
    for (const auto& s : samples_) rates.push_back(s.rate());
    body["sample_rates"] = rates;
  }
  return Response{200, body};
}

Response QueryService::handle_healthz() const { return Response{200, json{{"status", "ok"}}}; }

void QueryService::listen(const std::string& host, int port) {
  server_ = std::make_shared<Server>();
  auto& http = server_->http;
  const auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
    res.set_header("Access-Control-Allow-Origin", "*");
  };
  http.Post("/query", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_query(req.body));
  });
  http.Post("/heatmap", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_heatmap(req.body));
  });
  http.Get("/schema", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_schema()); });
  http.Get("/healthz", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, handle_healthz()); });
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
  if (!http.bind_to_port(host, port)) {
    throw ArgumentError("cannot listen on " + host + ":" + std::to_string(port));
  }
  http.listen_after_bind();
}

void QueryService::stop() {
  if (server_) server_->http.stop();
}

}  // namespace deepspace::service
