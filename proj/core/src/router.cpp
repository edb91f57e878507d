// SPDX-License-Identifier: Apache-2.0
#include "moesim/router.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>

#include "json_tensor.hpp"
#include "moesim/error.hpp"
#include "rng.hpp"

namespace moesim {
namespace {

// Scale of the expert down-projection. Keeps the residual update well below
// the router margin so later-layer routing stays a relabelling of layer 0.
constexpr double kExpertOutputScale = 0.05;

}  // namespace

void ToyMoeParams::validate() const {
  if (d_model < 1 || d_ff < 1) throw ConfigError("toy model widths must be positive");
  if (router.empty()) throw ConfigError("toy model has no layers");
  if (experts.size() != router.size()) throw ConfigError("toy model expert/router layer count mismatch");
  const int e = num_experts();
  for (std::size_t l = 0; l < router.size(); ++l) {
    if (router[l].rows() != e || router[l].cols() != d_model) {
      throw ConfigError("router " + std::to_string(l) + " has the wrong shape");
    }
    if (!router[l].allFinite()) throw ConfigError("router " + std::to_string(l) + " is not finite");
    if (static_cast<int>(experts[l].size()) != e) {
      throw ConfigError("layer " + std::to_string(l) + " must hold exactly E experts");
    }
    for (const auto& w : experts[l]) {
      if (w.up.rows() != d_ff || w.up.cols() != d_model || w.down.rows() != d_model || w.down.cols() != d_ff) {
        throw ConfigError("layer " + std::to_string(l) + " has a mis-shaped expert");
      }
      if (!w.up.allFinite() || !w.down.allFinite()) {
        throw ConfigError("layer " + std::to_string(l) + " has non-finite expert weights");
      }
    }
  }
}

bool operator==(const ToyMoeParams& a, const ToyMoeParams& b) {
  auto same = [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && (x.array() == y.array()).all();
  };
  if (a.d_model != b.d_model || a.d_ff != b.d_ff || a.router.size() != b.router.size() ||
      a.experts.size() != b.experts.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.router.size(); ++l) {
    if (!same(a.router[l], b.router[l]) || a.experts[l].size() != b.experts[l].size()) return false;
    for (std::size_t e = 0; e < a.experts[l].size(); ++e) {
      if (!same(a.experts[l][e].up, b.experts[l][e].up) || !same(a.experts[l][e].down, b.experts[l][e].down)) {
        return false;
      }
    }
  }
  return true;
}

ToyMoeParams make_toy_model(const ModelShape& shape, std::uint64_t seed, int d_ff) {
  shape.validate();
  if (d_ff < 0) throw ConfigError("d_ff must be >= 0");
  const int d = shape.d_model;
  const int num_experts = shape.experts_per_layer;

  ToyMoeParams p;
  p.d_model = d;
  p.d_ff = d_ff == 0 ? 2 * d : d_ff;

  auto rng = detail::make_rng(seed, detail::Stream::toy_model);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd centroids(num_experts, d);
  for (int e = 0; e < num_experts; ++e) {
    double norm = 0.0;
    while (norm < 1e-12) {
      for (int k = 0; k < d; ++k) centroids(e, k) = normal(rng);
      norm = centroids.row(e).norm();
    }
    centroids.row(e) /= norm;
  }

  std::vector<int> perm(num_experts);
  std::iota(perm.begin(), perm.end(), 0);
  const double up_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const double down_bound = kExpertOutputScale / std::sqrt(static_cast<double>(p.d_ff));
  std::uniform_real_distribution<double> up_dist(-up_bound, up_bound);
  std::uniform_real_distribution<double> down_dist(-down_bound, down_bound);

  for (int l = 0; l < shape.num_layers; ++l) {
    if (l > 0) std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd router(num_experts, d);
    for (int e = 0; e < num_experts; ++e) router.row(perm[e]) = centroids.row(e);
    p.router.push_back(std::move(router));

    std::vector<ExpertWeights> layer;
    layer.reserve(num_experts);
    for (int e = 0; e < num_experts; ++e) {
      ExpertWeights w{Eigen::MatrixXd(p.d_ff, d), Eigen::MatrixXd(d, p.d_ff)};
      for (Eigen::Index i = 0; i < w.up.size(); ++i) w.up.data()[i] = up_dist(rng);
      for (Eigen::Index i = 0; i < w.down.size(); ++i) w.down.data()[i] = down_dist(rng);
      layer.push_back(std::move(w));
    }
    p.experts.push_back(std::move(layer));
  }
  return p;
}

namespace {

Eigen::VectorXd router_logits(int layer, const Eigen::Ref<const Eigen::VectorXd>& x, const ToyMoeParams& params) {
  if (layer < 0 || layer >= params.num_layers()) {
    throw ConfigError("layer " + std::to_string(layer) + " outside the model");
  }
  if (x.size() != params.d_model) throw ConfigError("embedding width does not match d_model");
  if (!x.allFinite()) throw NumericError("non-finite embedding passed to the router");
  return params.router[layer] * x;
}

}  // namespace

ExpertId route_top1(int layer, const Eigen::Ref<const Eigen::VectorXd>& x, const ToyMoeParams& params) {
  const Eigen::VectorXd logits = router_logits(layer, x, params);
  ExpertId best = 0;
  for (Eigen::Index e = 1; e < logits.size(); ++e) {
    if (logits[e] > logits[best]) best = static_cast<ExpertId>(e);
  }
  return best;
}

double route_margin(int layer, const Eigen::Ref<const Eigen::VectorXd>& x, const ToyMoeParams& params) {
  const Eigen::VectorXd logits = router_logits(layer, x, params);
  double first = -std::numeric_limits<double>::infinity();
  double second = first;
  for (Eigen::Index e = 0; e < logits.size(); ++e) {
    if (logits[e] > first) {
      second = first;
      first = logits[e];
    } else if (logits[e] > second) {
      second = logits[e];
    }
  }
  return first - second;
}

Eigen::VectorXd expert_forward(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::MatrixXd& up,
                               const Eigen::MatrixXd& down) {
  if (up.cols() != x.size() || down.cols() != up.rows() || down.rows() != x.size()) {
    throw ConfigError("expert weight shapes do not match the embedding");
  }
  const Eigen::VectorXd hidden = (up * x).cwiseMax(0.0);
  return down * hidden;
}

int PlacementLayer::physical_count() const {
  int n = 0;
  for (int p : physical_slot) n = std::max(n, p + 1);
  return n;
}

namespace {

void check_batch(const Batch& batch, const ToyMoeParams& params) {
  params.validate();
  if (batch.embeddings.cols() != params.d_model) throw ConfigError("batch width does not match the model");
}

}  // namespace

Eigen::MatrixXd moe_forward(const Batch& batch, const ToyMoeParams& params, DenseBaseline) {
  check_batch(batch, params);
  Eigen::MatrixXd x = batch.embeddings;
  for (int l = 0; l < params.num_layers(); ++l) {
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
      const Eigen::VectorXd token = x.row(s).transpose();
      const ExpertWeights& w = params.experts[l][route_top1(l, token, params)];
      x.row(s) += expert_forward(token, w.up, w.down).transpose();
    }
  }
  return x;
}

Eigen::MatrixXd moe_forward(const Batch& batch, const ToyMoeParams& params, const Placement& placement) {
  check_batch(batch, params);
  if (static_cast<int>(placement.layers.size()) != params.num_layers()) {
    throw PlacementError("placement covers " + std::to_string(placement.layers.size()) + " layers, model has " +
                         std::to_string(params.num_layers()));
  }
  Eigen::MatrixXd x = batch.embeddings;
  for (int l = 0; l < params.num_layers(); ++l) {
    const PlacementLayer& layer = placement.layers[l];
    if (static_cast<Eigen::Index>(layer.token_slot.size()) != x.rows()) {
      throw PlacementError("layer " + std::to_string(l) + ": placement does not cover every token");
    }
    // Replica weights are materialized as independent copies.
    std::vector<ExpertWeights> replicas;
    replicas.reserve(layer.slots.size());
    for (const SlotRef& slot : layer.slots) {
      if (slot.expert < 0 || slot.expert >= params.num_experts()) {
        throw PlacementError("layer " + std::to_string(l) + ": slot holds unknown expert " +
                             std::to_string(slot.expert));
      }
      replicas.push_back(params.experts[l][slot.expert]);
    }
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
      const int slot = layer.token_slot[s];
      if (slot < 0 || slot >= static_cast<int>(replicas.size())) {
        throw PlacementError("layer " + std::to_string(l) + ": token " + std::to_string(s) +
                             " assigned to non-resident slot " + std::to_string(slot));
      }
      const Eigen::VectorXd token = x.row(s).transpose();
      x.row(s) += expert_forward(token, replicas[slot].up, replicas[slot].down).transpose();
    }
  }
  return x;
}

LayerRouting route_batch(const Eigen::MatrixXd& embeddings, const ToyMoeParams& params) {
  if (embeddings.cols() != params.d_model) throw ConfigError("batch width does not match the model");
  LayerRouting routing(params.num_layers(), std::vector<ExpertId>(embeddings.rows()));
  Eigen::MatrixXd x = embeddings;
  for (int l = 0; l < params.num_layers(); ++l) {
    for (Eigen::Index s = 0; s < x.rows(); ++s) {
      const Eigen::VectorXd token = x.row(s).transpose();
      const ExpertId e = route_top1(l, token, params);
      routing[l][s] = e;
      const ExpertWeights& w = params.experts[l][e];
      x.row(s) += expert_forward(token, w.up, w.down).transpose();
    }
  }
  return routing;
}

void write_toy_model(const ToyMoeParams& params, std::ostream& out) {
  params.validate();
  nlohmann::json doc;
  doc["format"] = "moesim-toy-model";
  doc["version"] = 1;
  doc["d_model"] = params.d_model;
  doc["d_ff"] = params.d_ff;
  doc["layers"] = nlohmann::json::array();
  for (int l = 0; l < params.num_layers(); ++l) {
    nlohmann::json layer;
    layer["router"] = detail::matrix_to_json(params.router[l]);
    layer["experts"] = nlohmann::json::array();
    for (const auto& w : params.experts[l]) {
      layer["experts"].push_back({{"up", detail::matrix_to_json(w.up)}, {"down", detail::matrix_to_json(w.down)}});
    }
    doc["layers"].push_back(std::move(layer));
  }
  out << doc.dump() << '\n';
  if (!out) throw IoError("failed writing toy model");
}

void write_toy_model(const ToyMoeParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_toy_model(params, out);
}

ToyMoeParams read_toy_model(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("toy model: ") + e.what(), 0);
  }
  ToyMoeParams p;
  try {
    if (doc.at("format") != "moesim-toy-model" || doc.at("version") != 1) {
      throw ParseError("toy model: unsupported format or version", 0);
    }
    p.d_model = doc.at("d_model").get<int>();
    p.d_ff = doc.at("d_ff").get<int>();
    for (const auto& layer : doc.at("layers")) {
      p.router.push_back(detail::matrix_from_json(layer.at("router"), "router"));
      std::vector<ExpertWeights> experts;
      for (const auto& w : layer.at("experts")) {
        experts.push_back({detail::matrix_from_json(w.at("up"), "expert.up"),
                           detail::matrix_from_json(w.at("down"), "expert.down")});
      }
      p.experts.push_back(std::move(experts));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("toy model: ") + e.what(), 0);
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("toy model: ") + e.what());
  }
  return p;
}

ToyMoeParams read_toy_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_toy_model(in);
}

}  // namespace moesim
