// SPDX-License-Identifier: Apache-2.0
#include "moesim/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "json_tensor.hpp"
#include "moesim/error.hpp"
#include "moesim/float_text.hpp"
#include "moesim/sparsemax.hpp"
#include "rng.hpp"

namespace moesim {

void SruParams::validate() const {
  if (d_model < 1) throw ConfigError("predictor d_model must be positive");
  if (head_w.empty() || head_w.size() != head_b.size()) throw ConfigError("predictor heads are malformed");
  const Eigen::Index d = d_model;
  for (const auto& layer : sru) {
    if (layer.w.rows() != d || layer.w.cols() != d || layer.w_f.rows() != d || layer.w_f.cols() != d ||
        layer.w_r.rows() != d || layer.w_r.cols() != d || layer.b_f.size() != d || layer.b_r.size() != d) {
      throw ConfigError("SRU layer does not match d_model");
    }
  }
  const Eigen::Index e = num_experts();
  for (std::size_t l = 0; l < head_w.size(); ++l) {
    if (head_w[l].rows() != e || head_w[l].cols() != d || head_b[l].size() != e) {
      throw ConfigError("head " + std::to_string(l) + " has the wrong shape");
    }
  }
  bool finite = true;
  for_each_tensor([&](const std::string&, const auto& t) { finite = finite && t.allFinite(); });
  if (!finite) throw ConfigError("predictor parameters are not finite");
}

SruParams SruParams::zeros_like() const {
  SruParams z = *this;
  z.for_each_tensor([](const std::string&, auto& t) { t.setZero(); });
  return z;
}

bool operator==(const SruParams& a, const SruParams& b) {
  if (a.d_model != b.d_model || a.sru.size() != b.sru.size() || a.head_w.size() != b.head_w.size()) return false;
  std::vector<const double*> pa, pb;
  std::vector<Eigen::Index> sa, sb;
  a.for_each_tensor([&](const std::string&, const auto& t) {
    pa.push_back(t.data());
    sa.push_back(t.size());
  });
  b.for_each_tensor([&](const std::string&, const auto& t) {
    pb.push_back(t.data());
    sb.push_back(t.size());
  });
  if (sa != sb) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!std::equal(pa[i], pa[i] + sa[i], pb[i])) return false;
  }
  return true;
}

SruParams init_predictor(int d_model, int num_moe_layers, int num_experts, int num_sru_layers,
                         std::uint64_t seed) {
  if (d_model < 1 || num_moe_layers < 1 || num_experts < 1 || num_sru_layers < 0) {
    throw ConfigError("invalid predictor dimensions");
  }
  const Eigen::Index d = d_model;
  SruParams p;
  p.d_model = d_model;
  for (int i = 0; i < num_sru_layers; ++i) {
    p.sru.push_back({Eigen::MatrixXd(d, d), Eigen::MatrixXd(d, d), Eigen::MatrixXd(d, d), Eigen::VectorXd(d),
                     Eigen::VectorXd(d)});
  }
  for (int l = 0; l < num_moe_layers; ++l) {
    p.head_w.emplace_back(num_experts, d);
    p.head_b.emplace_back(num_experts);
  }
  auto rng = detail::make_rng(seed, detail::Stream::predictor_init);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_model));
  std::uniform_real_distribution<double> dist(-bound, bound);
  p.for_each_tensor([&](const std::string&, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
  });
  return p;
}

Eigen::MatrixXd sru_forward(const Eigen::MatrixXd& embeddings, const SruParams& params) {
  if (embeddings.cols() != params.d_model) throw ConfigError("embedding width does not match predictor d_model");
  return sru_forward(embeddings, params.sru);
}

HashTable HashTable::from_assignment(int batch_index, LayerRouting assignment) {
  HashTable t;
  t.batch_index = batch_index;
  t.assignment = std::move(assignment);
  t.replica_count.resize(t.assignment.size());
  for (std::size_t l = 0; l < t.assignment.size(); ++l) {
    for (ExpertId e : t.assignment[l]) ++t.replica_count[l][e];
  }
  return t;
}

void HashTable::validate(int num_experts) const {
  if (replica_count.size() != assignment.size()) throw ValidationError("hash table layer count mismatch");
  const int b = batch_size();
  for (std::size_t l = 0; l < assignment.size(); ++l) {
    if (static_cast<int>(assignment[l].size()) != b) throw ValidationError("hash table rows differ in length");
    std::map<ExpertId, int> hist;
    for (ExpertId e : assignment[l]) {
      if (e < 0 || e >= num_experts) {
        throw ValidationError("hash table layer " + std::to_string(l) + " holds expert " + std::to_string(e) +
                              " outside [0, " + std::to_string(num_experts) + ")");
      }
      ++hist[e];
    }
    if (hist != replica_count[l]) {
      throw ValidationError("hash table layer " + std::to_string(l) + " replica counts disagree with assignment");
    }
  }
}

namespace {

Eigen::MatrixXd head_logits(const SruParams& p, const Eigen::MatrixXd& top, int layer) {
  return (top * p.head_w[layer].transpose()).rowwise() + p.head_b[layer].transpose();
}

}  // namespace

HashTable predict_batch(const Batch& batch, const SruParams& params) {
  const Eigen::MatrixXd hidden = sru_forward(batch.embeddings, params);
  LayerRouting assignment(params.num_moe_layers(), std::vector<ExpertId>(hidden.rows()));
  for (int l = 0; l < params.num_moe_layers(); ++l) {
    const Eigen::MatrixXd logits = head_logits(params, hidden, l);
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
      assignment[l][s] = argmax_lowest(sparsemax(logits.row(s).transpose()));
    }
  }
  return HashTable::from_assignment(batch.index, std::move(assignment));
}

HashTable oracle_table(const Batch& batch) { return HashTable::from_assignment(batch.index, batch.oracle_routing); }

double evaluate_accuracy(const HashTable& predicted, const LayerRouting& oracle) {
  if (predicted.assignment.size() != oracle.size()) throw ConfigError("accuracy: layer count mismatch");
  std::size_t cells = 0;
  std::size_t hits = 0;
  for (std::size_t l = 0; l < oracle.size(); ++l) {
    if (predicted.assignment[l].size() != oracle[l].size()) throw ConfigError("accuracy: token count mismatch");
    for (std::size_t s = 0; s < oracle[l].size(); ++s) {
      ++cells;
      if (predicted.assignment[l][s] == oracle[l][s]) ++hits;
    }
  }
  if (cells == 0) throw ConfigError("accuracy of an empty table");
  return static_cast<double>(hits) / static_cast<double>(cells);
}

TableSource predictor_source(std::shared_ptr<const SruParams> params) {
  if (!params) throw ConfigError("predictor_source needs parameters");
  return [params = std::move(params)](const Batch& batch) { return predict_batch(batch, *params); };
}

TableSource oracle_source() {
  return [](const Batch& batch) { return oracle_table(batch); };
}

namespace {

struct LayerCache {
  Eigen::MatrixXd input;  // T x d
  Eigen::MatrixXd proj;
  Eigen::MatrixXd f;
  Eigen::MatrixXd r;
  Eigen::MatrixXd c;
  Eigen::MatrixXd g;  // tanh(c)
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Eigen::MatrixXd top;
};

ForwardCache forward_cached(const SruParams& p, const Eigen::MatrixXd& x) {
  if (x.cols() != p.d_model) throw ConfigError("embedding width does not match predictor d_model");
  if (x.rows() == 0) throw ConfigError("empty batch");
  ForwardCache fc;
  Eigen::MatrixXd input = x;
  const Eigen::Index steps = x.rows();
  const Eigen::Index d = x.cols();
  for (const SruLayerParams& layer : p.sru) {
    LayerCache lc;
    lc.proj = input * layer.w.transpose();
    lc.f = ((input * layer.w_f.transpose()).rowwise() + layer.b_f.transpose()).unaryExpr(&sigmoid);
    lc.r = ((input * layer.w_r.transpose()).rowwise() + layer.b_r.transpose()).unaryExpr(&sigmoid);
    lc.c.resize(steps, d);
    lc.g.resize(steps, d);
    Eigen::MatrixXd hidden(steps, d);
    Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index t = 0; t < steps; ++t) {
      c = lc.f.row(t).cwiseProduct(c) + (1.0 - lc.f.row(t).array()).matrix().cwiseProduct(lc.proj.row(t));
      lc.c.row(t) = c;
      lc.g.row(t) = c.array().tanh().matrix();
      hidden.row(t) =
          lc.r.row(t).cwiseProduct(lc.g.row(t)) + (1.0 - lc.r.row(t).array()).matrix().cwiseProduct(input.row(t));
    }
    if (!hidden.allFinite()) throw NumericError("SRU stack produced a non-finite value");
    lc.input = std::move(input);
    input = std::move(hidden);
    fc.layers.push_back(std::move(lc));
  }
  fc.top = std::move(input);
  return fc;
}

void check_labels(const SruParams& p, const Eigen::MatrixXd& x, const LayerRouting& labels) {
  if (static_cast<int>(labels.size()) != p.num_moe_layers()) throw ConfigError("label layer count mismatch");
  for (const auto& row : labels) {
    if (static_cast<Eigen::Index>(row.size()) != x.rows()) throw ConfigError("label row length mismatch");
    for (ExpertId e : row) {
      if (e < 0 || e >= p.num_experts()) throw ConfigError("label expert out of range");
    }
  }
}

// Accumulates softmax cross-entropy over heads; fills d(loss)/d(logits) when
// `dlogits` is non-null.
double head_loss(const SruParams& p, const Eigen::MatrixXd& top, const LayerRouting& labels,
                 std::vector<Eigen::MatrixXd>* dlogits) {
  const double inv_tokens = 1.0 / static_cast<double>(top.rows());
  double loss = 0.0;
  for (int l = 0; l < p.num_moe_layers(); ++l) {
    Eigen::MatrixXd logits = head_logits(p, top, l);
    for (Eigen::Index s = 0; s < logits.rows(); ++s) {
      const double m = logits.row(s).maxCoeff();
      Eigen::RowVectorXd ex = (logits.row(s).array() - m).exp().matrix();
      const double z = ex.sum();
      loss += (m + std::log(z) - logits(s, labels[l][s])) * inv_tokens;
      if (dlogits) {
        ex /= z;
        ex[labels[l][s]] -= 1.0;
        logits.row(s) = ex * inv_tokens;
      }
    }
    if (dlogits) dlogits->push_back(std::move(logits));
  }
  return loss;
}

}  // namespace

double batch_loss(const SruParams& params, const Eigen::MatrixXd& embeddings, const LayerRouting& labels) {
  check_labels(params, embeddings, labels);
  const ForwardCache fc = forward_cached(params, embeddings);
  return head_loss(params, fc.top, labels, nullptr);
}

double batch_loss_and_gradient(const SruParams& params, const Eigen::MatrixXd& embeddings,
                               const LayerRouting& labels, SruParams& grad) {
  check_labels(params, embeddings, labels);
  const ForwardCache fc = forward_cached(params, embeddings);
  std::vector<Eigen::MatrixXd> dlogits;
  const double loss = head_loss(params, fc.top, labels, &dlogits);

  grad = params.zeros_like();
  Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(fc.top.rows(), fc.top.cols());
  for (int l = 0; l < params.num_moe_layers(); ++l) {
    grad.head_w[l] = dlogits[l].transpose() * fc.top;
    grad.head_b[l] = dlogits[l].colwise().sum().transpose();
    d_hidden += dlogits[l] * params.head_w[l];
  }

  const Eigen::Index steps = fc.top.rows();
  const Eigen::Index d = fc.top.cols();
  for (int k = params.num_sru_layers() - 1; k >= 0; --k) {
    const LayerCache& lc = fc.layers[k];
    const SruLayerParams& layer = params.sru[k];
    Eigen::MatrixXd d_proj(steps, d);
    Eigen::MatrixXd d_af(steps, d);
    Eigen::MatrixXd d_ar(steps, d);
    Eigen::MatrixXd d_input(steps, d);
    Eigen::ArrayXd dc_next = Eigen::ArrayXd::Zero(d);
    for (Eigen::Index t = steps - 1; t >= 0; --t) {
      const Eigen::ArrayXd dh = d_hidden.row(t).transpose().array();
      const Eigen::ArrayXd g = lc.g.row(t).transpose().array();
      const Eigen::ArrayXd r = lc.r.row(t).transpose().array();
      const Eigen::ArrayXd f = lc.f.row(t).transpose().array();
      const Eigen::ArrayXd x = lc.input.row(t).transpose().array();
      const Eigen::ArrayXd proj = lc.proj.row(t).transpose().array();
      const Eigen::ArrayXd c_prev =
          t > 0 ? Eigen::ArrayXd(lc.c.row(t - 1).transpose().array()) : Eigen::ArrayXd::Zero(d);

      d_ar.row(t) = (dh * (g - x) * r * (1.0 - r)).matrix().transpose();
      const Eigen::ArrayXd dc = dh * r * (1.0 - g * g) + dc_next;
      d_af.row(t) = (dc * (c_prev - proj) * f * (1.0 - f)).matrix().transpose();
      d_proj.row(t) = (dc * (1.0 - f)).matrix().transpose();
      d_input.row(t) = (dh * (1.0 - r)).matrix().transpose();
      dc_next = dc * f;
    }
    SruLayerParams& g = grad.sru[k];
    g.w = d_proj.transpose() * lc.input;
    g.w_f = d_af.transpose() * lc.input;
    g.w_r = d_ar.transpose() * lc.input;
    g.b_f = d_af.colwise().sum().transpose();
    g.b_r = d_ar.colwise().sum().transpose();
    d_input += d_proj * layer.w + d_af * layer.w_f + d_ar * layer.w_r;
    d_hidden = std::move(d_input);
  }
  return loss;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (num_sru_layers < 0) throw ConfigError("num_sru_layers must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0)) {
    throw ConfigError("invalid Adam hyperparameters");
  }
}

namespace {

std::vector<Eigen::Map<Eigen::VectorXd>> flat_views(SruParams& p) {
  std::vector<Eigen::Map<Eigen::VectorXd>> views;
  p.for_each_tensor([&](const std::string&, auto& t) { views.emplace_back(t.data(), t.size()); });
  return views;
}

class Adam {
 public:
  Adam(const SruParams& like, const TrainConfig& cfg) : m_(like.zeros_like()), v_(like.zeros_like()), cfg_(cfg) {}

  void step(SruParams& params, SruParams& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto p = flat_views(params);
    auto g = flat_views(grad);
    auto m = flat_views(m_);
    auto v = flat_views(v_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i].cwiseAbs2();
      p[i].array() -= cfg_.learning_rate * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + cfg_.epsilon);
    }
  }

 private:
  SruParams m_;
  SruParams v_;
  TrainConfig cfg_;
  int t_ = 0;
};

}  // namespace

TrainResult train_predictor(const RoutingTrace& trace, const TrainConfig& config) {
  config.validate();
  trace.validate();
  const ModelShape& shape = trace.shape();

  TrainResult result;
  result.params = init_predictor(shape.d_model, shape.num_layers, shape.experts_per_layer, config.num_sru_layers,
                                 config.seed);

  double initial = 0.0;
  for (const Batch& b : trace.batches) initial += batch_loss(result.params, b.embeddings, b.oracle_routing);
  result.loss_curve.push_back(initial / static_cast<double>(trace.batches.size()));

  std::vector<std::size_t> order(trace.batches.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = detail::make_rng(config.seed, detail::Stream::training_order);
  Adam adam(result.params, config);
  SruParams grad;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      const Batch& b = trace.batches[idx];
      double loss = 0.0;
      try {
        loss = batch_loss_and_gradient(result.params, b.embeddings, b.oracle_routing, grad);
      } catch (const NumericError& e) {
        throw TrainingError(e.what(), epoch);
      }
      if (!std::isfinite(loss)) throw TrainingError("loss diverged", epoch);
      adam.step(result.params, grad);
      total += loss;
    }
    result.loss_curve.push_back(total / static_cast<double>(order.size()));
    if (config.on_epoch_end && !config.on_epoch_end(epoch, result.params)) break;
  }
  return result;
}

void write_predictor(const SruParams& params, std::ostream& out) {
  params.validate();
  nlohmann::json doc;
  doc["format"] = "moesim-predictor";
  doc["version"] = 1;
  doc["d_model"] = params.d_model;
  doc["num_sru_layers"] = params.num_sru_layers();
  doc["num_moe_layers"] = params.num_moe_layers();
  doc["num_experts"] = params.num_experts();
  nlohmann::json tensors = nlohmann::json::object();
  params.for_each_tensor(
      [&](const std::string& name, const auto& t) { tensors[name] = detail::matrix_to_json(Eigen::MatrixXd(t)); });
  doc["tensors"] = std::move(tensors);
  out << doc.dump() << '\n';
  if (!out) throw IoError("failed writing predictor parameters");
}

void write_predictor(const SruParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_predictor(params, out);
}

SruParams read_predictor(std::istream& in) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("predictor: ") + e.what(), 0);
  }
  SruParams p;
  try {
    if (doc.at("format") != "moesim-predictor" || doc.at("version") != 1) {
      throw ParseError("predictor: unsupported format or version", 0);
    }
    const int d = doc.at("d_model").get<int>();
    const int k = doc.at("num_sru_layers").get<int>();
    const int l = doc.at("num_moe_layers").get<int>();
    const int e = doc.at("num_experts").get<int>();
    if (d < 1 || k < 0 || l < 1 || e < 1) throw ValidationError("predictor: invalid dimensions");
    p = init_predictor(d, l, e, k, 0);
    const auto& tensors = doc.at("tensors");
    p.for_each_tensor([&](const std::string& name, auto& t) {
      Eigen::MatrixXd m = detail::matrix_from_json(tensors.at(name), name);
      if (m.rows() != t.rows() || m.cols() != t.cols()) {
        throw ValidationError("predictor: tensor " + name + " has the wrong shape");
      }
      t = m;
    });
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("predictor: ") + e.what(), 0);
  }
  try {
    p.validate();
  } catch (const ConfigError& e) {
    throw ValidationError(std::string("predictor: ") + e.what());
  }
  return p;
}

SruParams read_predictor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_predictor(in);
}

void write_loss_csv(const std::vector<double>& loss_curve, std::ostream& out) {
  std::string text = "epoch,loss\n";
  for (std::size_t i = 0; i < loss_curve.size(); ++i) {
    text += std::to_string(i);
    text += ',';
    append_double(text, loss_curve[i]);
    text += '\n';
  }
  out << text;
  if (!out) throw IoError("failed writing loss curve");
}

}  // namespace moesim
