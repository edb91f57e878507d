// SPDX-License-Identifier: Apache-2.0
#include "moesim/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "moesim/error.hpp"
#include "moesim/float_text.hpp"
#include "moesim/router.hpp"
#include "rng.hpp"

namespace moesim {
namespace {

constexpr std::string_view kMagic = "moesim-trace";
constexpr int kFormatVersion = 1;
constexpr double kNoiseFraction = 0.25;
constexpr double kMinMargin = 1e-6;
constexpr int kMaxResamples = 10000;

class EmbeddingSampler {
 public:
  EmbeddingSampler(const ModelShape& shape, std::uint64_t seed)
      : model_(make_toy_model(shape, seed)), centroids_(model_.router.front()) {
    const int num_experts = shape.experts_per_layer;
    double min_gap = std::numeric_limits<double>::infinity();
    for (int e = 0; e < num_experts; ++e) {
      double best_other = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < num_experts; ++j) {
        if (j != e) best_other = std::max(best_other, centroids_.row(j).dot(centroids_.row(e)));
      }
      min_gap = std::min(min_gap, 1.0 - best_other);
    }
    if (!(min_gap > kMinMargin)) throw ConfigError("router centroids are not separable for this shape");
    sigma_ = kNoiseFraction * min_gap;

    targets_.assign(shape.num_layers, std::vector<ExpertId>(num_experts));
    for (int l = 0; l < shape.num_layers; ++l)
      for (int e = 0; e < num_experts; ++e) targets_[l][e] = route_top1(l, centroids_.row(e).transpose(), model_);
  }

  // Draws an embedding for `expert`; returns it with its per-layer routing.
  Eigen::VectorXd sample(ExpertId expert, std::mt19937_64& rng, std::vector<ExpertId>& routing) {
    std::normal_distribution<double> normal(0.0, sigma_);
    const Eigen::Index d = centroids_.cols();
    Eigen::VectorXd x(d);
    for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
      for (Eigen::Index k = 0; k < d; ++k) x[k] = centroids_(expert, k) + normal(rng);
      if (consistent(x, expert)) {
        routing.resize(targets_.size());
        for (std::size_t l = 0; l < targets_.size(); ++l) routing[l] = targets_[l][expert];
        return x;
      }
    }
    throw ConfigError("could not synthesize a margin-positive embedding for expert " + std::to_string(expert));
  }

 private:
  bool consistent(const Eigen::VectorXd& x, ExpertId expert) const {
    Eigen::VectorXd stream = x;
    for (int l = 0; l < model_.num_layers(); ++l) {
      const ExpertId want = targets_[l][expert];
      if (route_top1(l, x, model_) != want || route_margin(l, x, model_) <= kMinMargin) return false;
      if (route_top1(l, stream, model_) != want || route_margin(l, stream, model_) <= kMinMargin) return false;
      const ExpertWeights& w = model_.experts[l][want];
      stream += expert_forward(stream, w.up, w.down);
    }
    return true;
  }

  ToyMoeParams model_;
  Eigen::MatrixXd centroids_;
  double sigma_ = 0.0;
  std::vector<std::vector<ExpertId>> targets_;  // [layer][layer-0 expert]
};

void check_request(const TraceMeta& meta) {
  meta.shape.validate();
  if (meta.num_batches < 1) throw ConfigError("num_batches must be >= 1");
  const Popularity& pop = meta.popularity;
  if (pop.hot_experts < 0 || pop.hot_experts > meta.shape.experts_per_layer) {
    throw ConfigError("hot_experts must lie in [0, experts_per_layer]");
  }
  if (pop.hot_experts == 0 && !(std::isfinite(pop.skew) && pop.skew >= 0.0)) {
    throw ConfigError("skew must be a finite value >= 0");
  }
}

}  // namespace

RoutingTrace generate_trace(const TraceMeta& meta) {
  check_request(meta);
  const ModelShape& shape = meta.shape;
  EmbeddingSampler sampler(shape, meta.seed);
  auto rng = detail::make_rng(meta.seed, detail::Stream::trace);

  std::vector<ExpertId> by_rank(shape.experts_per_layer);
  std::iota(by_rank.begin(), by_rank.end(), 0);
  std::shuffle(by_rank.begin(), by_rank.end(), rng);

  std::vector<double> weights(shape.experts_per_layer);
  for (int k = 0; k < shape.experts_per_layer; ++k) weights[k] = std::pow(k + 1.0, -meta.popularity.skew);
  std::discrete_distribution<int> zipf(weights.begin(), weights.end());

  RoutingTrace trace;
  trace.meta = meta;
  trace.batches.reserve(meta.num_batches);
  const int hot = meta.popularity.hot_experts;
  std::vector<ExpertId> first_layer(shape.batch_size);
  std::vector<ExpertId> routing;

  for (int b = 0; b < meta.num_batches; ++b) {
    if (hot > 0) {
      for (int s = 0; s < shape.batch_size; ++s) first_layer[s] = by_rank[s % hot];
      std::shuffle(first_layer.begin(), first_layer.end(), rng);
    } else {
      for (int s = 0; s < shape.batch_size; ++s) first_layer[s] = by_rank[zipf(rng)];
    }

    Batch batch;
    batch.index = b;
    batch.embeddings.resize(shape.batch_size, shape.d_model);
    batch.oracle_routing.assign(shape.num_layers, std::vector<ExpertId>(shape.batch_size));
    for (int s = 0; s < shape.batch_size; ++s) {
      batch.embeddings.row(s) = sampler.sample(first_layer[s], rng, routing).transpose();
      for (int l = 0; l < shape.num_layers; ++l) batch.oracle_routing[l][s] = routing[l];
    }
    trace.batches.push_back(std::move(batch));
  }
  return trace;
}

RoutingTrace generate_trace(const ModelShape& shape, int num_batches, double skew, std::uint64_t seed) {
  return generate_trace(TraceMeta{shape, num_batches, Popularity{skew, 0}, seed});
}

RoutingTrace generate_hot_trace(const ModelShape& shape, int num_batches, int hot_experts, std::uint64_t seed) {
  if (hot_experts < 1) throw ConfigError("hot_experts must be >= 1");
  return generate_trace(TraceMeta{shape, num_batches, Popularity{0.0, hot_experts}, seed});
}

void write_trace(const RoutingTrace& trace, std::ostream& out) {
  trace.validate();
  const auto& m = trace.meta;
  const auto& s = m.shape;
  std::string line;
  line.append(kMagic);
  line += " version=" + std::to_string(kFormatVersion);
  line += " layers=" + std::to_string(s.num_layers);
  line += " experts=" + std::to_string(s.experts_per_layer);
  line += " d_model=" + std::to_string(s.d_model);
  line += " batch_size=" + std::to_string(s.batch_size);
  line += " batches=" + std::to_string(m.num_batches);
  line += " skew=" + format_double(m.popularity.skew);
  line += " hot_experts=" + std::to_string(m.popularity.hot_experts);
  line += " seed=" + std::to_string(m.seed);
  line += '\n';
  out << line;

  for (const Batch& batch : trace.batches) {
    for (int pos = 0; pos < s.batch_size; ++pos) {
      line.clear();
      line += std::to_string(batch.index);
      line += ' ';
      line += std::to_string(pos);
      for (int l = 0; l < s.num_layers; ++l) {
        line += ' ';
        line += std::to_string(batch.oracle_routing[l][pos]);
      }
      for (int k = 0; k < s.d_model; ++k) {
        line += ' ';
        append_double(line, batch.embeddings(pos, k));
      }
      line += '\n';
      out << line;
    }
  }
  if (!out) throw IoError("failed writing trace");
}

void write_trace(const RoutingTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_trace(trace, out);
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) fields.push_back(line.substr(i, j - i));
    i = j;
  }
  return fields;
}

TraceMeta parse_header(std::string_view line) {
  const auto fields = split_fields(line);
  if (fields.empty() || fields.front() != kMagic) throw ParseError("missing moesim-trace header", 1);
  std::map<std::string, std::string_view, std::less<>> kv;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) throw ParseError("header field without '='", 1);
    if (!kv.emplace(std::string(fields[i].substr(0, eq)), fields[i].substr(eq + 1)).second) {
      throw ParseError("duplicate header field " + std::string(fields[i].substr(0, eq)), 1);
    }
  }
  auto take_int = [&](const char* key) -> long long {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError(std::string("header missing ") + key, 1);
    auto v = parse_integer(it->second);
    if (!v) throw ParseError(std::string("header field ") + key + " is not an integer", 1);
    kv.erase(it);
    return *v;
  };
  const long long version = take_int("version");
  if (version != kFormatVersion) throw ParseError("unsupported trace version " + std::to_string(version), 1);
  TraceMeta meta;
  meta.shape.num_layers = static_cast<int>(take_int("layers"));
  meta.shape.experts_per_layer = static_cast<int>(take_int("experts"));
  meta.shape.d_model = static_cast<int>(take_int("d_model"));
  meta.shape.batch_size = static_cast<int>(take_int("batch_size"));
  meta.num_batches = static_cast<int>(take_int("batches"));
  meta.popularity.hot_experts = static_cast<int>(take_int("hot_experts"));
  {
    auto it = kv.find("seed");
    if (it == kv.end()) throw ParseError("header missing seed", 1);
    std::uint64_t seed = 0;
    auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), seed);
    if (ec != std::errc{} || p != it->second.data() + it->second.size()) {
      throw ParseError("header field seed is not an unsigned integer", 1);
    }
    meta.seed = seed;
    kv.erase(it);
  }
  {
    auto it = kv.find("skew");
    if (it == kv.end()) throw ParseError("header missing skew", 1);
    auto v = parse_double(it->second);
    if (!v) throw ParseError("header field skew is not a finite real", 1);
    meta.popularity.skew = *v;
    kv.erase(it);
  }
  if (!kv.empty()) throw ParseError("unknown header field " + kv.begin()->first, 1);
  try {
    meta.shape.validate();
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid header shape: ") + e.what(), 1);
  }
  if (meta.num_batches < 1) throw ParseError("header declares no batches", 1);
  return meta;
}

}  // namespace

RoutingTrace read_trace(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty trace file", 1);
  RoutingTrace trace;
  trace.meta = parse_header(line);
  const ModelShape& s = trace.meta.shape;
  const std::size_t expected_fields = 2 + s.num_layers + s.d_model;
  const long long total = static_cast<long long>(trace.meta.num_batches) * s.batch_size;

  std::size_t line_no = 1;
  for (long long record = 0; record < total; ++record) {
    ++line_no;
    if (!std::getline(in, line)) {
      throw ParseError("truncated trace: expected " + std::to_string(total) + " token records, found " +
                           std::to_string(record),
                       line_no);
    }
    const int want_batch = static_cast<int>(record / s.batch_size);
    const int want_pos = static_cast<int>(record % s.batch_size);
    if (want_pos == 0) {
      Batch batch;
      batch.index = want_batch;
      batch.embeddings.resize(s.batch_size, s.d_model);
      batch.oracle_routing.assign(s.num_layers, std::vector<ExpertId>(s.batch_size));
      trace.batches.push_back(std::move(batch));
    }
    Batch& batch = trace.batches.back();

    const auto fields = split_fields(line);
    if (fields.size() != expected_fields) {
      throw ParseError("expected " + std::to_string(expected_fields) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    const auto b = parse_integer(fields[0]);
    const auto p = parse_integer(fields[1]);
    if (!b || !p) throw ParseError("batch/position must be integers", line_no);
    if (*b != want_batch || *p != want_pos) {
      throw ParseError("expected record for batch " + std::to_string(want_batch) + " position " +
                           std::to_string(want_pos),
                       line_no);
    }
    for (int l = 0; l < s.num_layers; ++l) {
      const auto e = parse_integer(fields[2 + l]);
      if (!e) throw ParseError("expert index is not an integer", line_no);
      if (*e < 0 || *e >= s.experts_per_layer) {
        throw ValidationError("line " + std::to_string(line_no) + ": expert index " + std::to_string(*e) +
                              " outside [0, " + std::to_string(s.experts_per_layer) + ")");
      }
      batch.oracle_routing[l][want_pos] = static_cast<ExpertId>(*e);
    }
    for (int k = 0; k < s.d_model; ++k) {
      const auto x = parse_double(fields[2 + s.num_layers + k]);
      if (!x) throw ParseError("embedding value is not a finite real", line_no);
      batch.embeddings(want_pos, k) = *x;
    }
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_fields(line).empty()) throw ParseError("unexpected record after the last batch", line_no);
  }
  trace.validate();
  return trace;
}

RoutingTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_trace(in);
}

}  // namespace moesim
