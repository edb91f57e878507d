// SPDX-License-Identifier: Apache-2.0
#pragma once

// Expert-assignment predictor: a stacked SRU trunk over the batch's token
// sequence with one linear head per MoE layer. Selection uses sparsemax over
// head logits; training minimizes softmax cross-entropy against the oracle
// routing.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "moesim/sru.hpp"
#include "moesim/trace.hpp"

namespace moesim {

inline constexpr int kDefaultSruLayers = 10;

struct SruParams {
  int d_model = 0;
  std::vector<SruLayerParams> sru;
  std::vector<Eigen::MatrixXd> head_w;  // per MoE layer, E x d_model
  std::vector<Eigen::VectorXd> head_b;  // per MoE layer, E

  int num_sru_layers() const { return static_cast<int>(sru.size()); }
  int num_moe_layers() const { return static_cast<int>(head_w.size()); }
  int num_experts() const { return head_w.empty() ? 0 : static_cast<int>(head_w.front().rows()); }

  void validate() const;
  SruParams zeros_like() const;

  // Calls fn(name, tensor) for every trainable tensor in a fixed order.
  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    visit(*this, fn);
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    visit(*this, fn);
  }

 private:
  template <class Self, class Fn>
  static void visit(Self& self, Fn& fn) {
    for (std::size_t i = 0; i < self.sru.size(); ++i) {
      const std::string p = "sru." + std::to_string(i) + ".";
      fn(p + "w", self.sru[i].w);
      fn(p + "w_f", self.sru[i].w_f);
      fn(p + "w_r", self.sru[i].w_r);
      fn(p + "b_f", self.sru[i].b_f);
      fn(p + "b_r", self.sru[i].b_r);
    }
    for (std::size_t l = 0; l < self.head_w.size(); ++l) {
      fn("head." + std::to_string(l) + ".w", self.head_w[l]);
      fn("head." + std::to_string(l) + ".b", self.head_b[l]);
    }
  }
};

bool operator==(const SruParams& a, const SruParams& b);

// Uniform in [-1/sqrt(d_model), 1/sqrt(d_model)], seeded.
SruParams init_predictor(int d_model, int num_moe_layers, int num_experts, int num_sru_layers,
                         std::uint64_t seed);

Eigen::MatrixXd sru_forward(const Eigen::MatrixXd& embeddings, const SruParams& params);

// Per-batch table keyed by (layer, token). replica_count[l] maps every expert
// that appears in assignment[l] to its token count there.
struct HashTable {
  int batch_index = 0;
  LayerRouting assignment;
  std::vector<std::map<ExpertId, int>> replica_count;

  static HashTable from_assignment(int batch_index, LayerRouting assignment);

  int num_layers() const { return static_cast<int>(assignment.size()); }
  int batch_size() const { return assignment.empty() ? 0 : static_cast<int>(assignment.front().size()); }

  // Throws ValidationError on out-of-range experts or counts that disagree
  // with the assignment histogram.
  void validate(int num_experts) const;

  friend bool operator==(const HashTable&, const HashTable&) = default;
};

HashTable predict_batch(const Batch& batch, const SruParams& params);

// Table built from the batch's oracle routing (a perfect predictor).
HashTable oracle_table(const Batch& batch);

// Fraction of (layer, token) cells where the prediction equals the oracle.
double evaluate_accuracy(const HashTable& predicted, const LayerRouting& oracle);

using TableSource = std::function<HashTable(const Batch&)>;
TableSource predictor_source(std::shared_ptr<const SruParams> params);
TableSource oracle_source();

// Training objective for one batch: mean over tokens of the cross-entropy
// summed over MoE layers. `labels` is L x B.
double batch_loss(const SruParams& params, const Eigen::MatrixXd& embeddings, const LayerRouting& labels);

// Same loss; writes d(loss)/d(param) into `grad` (resized to match params).
double batch_loss_and_gradient(const SruParams& params, const Eigen::MatrixXd& embeddings,
                               const LayerRouting& labels, SruParams& grad);

struct TrainConfig {
  int epochs = 20;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int num_sru_layers = kDefaultSruLayers;
  // Adam moments.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Called after every epoch; returning false ends training early.
  std::function<bool(int epoch, const SruParams& params)> on_epoch_end;

  void validate() const;
};

struct TrainResult {
  SruParams params;
  // loss_curve[0] is the full-trace loss of the initialization; entry k > 0 is
  // the mean mini-batch loss seen during epoch k.
  std::vector<double> loss_curve;
};

// Mini-batch training, one trace batch per step, batch order reshuffled each
// epoch from the seed. Throws TrainingError naming the epoch on divergence.
TrainResult train_predictor(const RoutingTrace& trace, const TrainConfig& config);

void write_predictor(const SruParams& params, std::ostream& out);
void write_predictor(const SruParams& params, const std::filesystem::path& path);
SruParams read_predictor(std::istream& in);
SruParams read_predictor(const std::filesystem::path& path);

// CSV with header "epoch,loss".
void write_loss_csv(const std::vector<double>& loss_curve, std::ostream& out);

}  // namespace moesim
