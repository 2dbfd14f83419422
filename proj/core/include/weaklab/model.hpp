#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "weaklab/augment.hpp" // SoftLabel
#include "weaklab/bagcore.hpp"
#include "weaklab/instances.hpp"
#include "weaklab/tensor.hpp"

namespace weaklab {

// cnn: conv(3->6,5x5), 2x2 maxpool, conv(6->16,5x5), 2x2 maxpool,
//      fc 400->120->84->2, for 3x32x32 inputs. Embedding = the 84-wide
//      activation before the output layer.
// mlp: fc D->64->32->2 over flattened features; embedding is the 32-wide
//      hidden activation.
enum class ArchKind { cnn, mlp };

enum class AggregationMode {
  mean_then_softmax, // softmax(mean of instance logits) -- default
  softmax_then_mean, // mean of per-instance softmax rows
  softmax_then_max,  // componentwise max of softmax rows, renormalized
};

ArchKind arch_from_string(const std::string& s);
std::string to_string(ArchKind a);
AggregationMode aggregation_from_string(const std::string& s);
std::string to_string(AggregationMode m);

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> v;

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
};

struct ModelParams {
  ArchKind arch = ArchKind::mlp;
  std::vector<int> input_shape;
  int embedding_dim = 0;
  std::uint64_t init_seed = 0;
  std::vector<ParamTensor> tensors;

  std::int64_t total_params() const;
  const ParamTensor& by_name(const std::string& name) const;
  ParamTensor& by_name(const std::string& name);
};

// Uniform init in +/- sqrt(1/fan_in), seeded.
ModelParams init_model(ArchKind arch, const std::vector<int>& input_shape,
                       std::uint64_t init_seed);

// FNV-1a over all parameter bytes; snapshot-purity checks compare this.
std::uint64_t params_checksum(const ModelParams& params);

// Cached activations for backward, one per instance of a bag.
struct InstanceTrace {
  std::vector<double> input;
  std::vector<double> conv1_pre, pool1, conv2_pre, pool2; // cnn path
  std::vector<int> pool1_arg, pool2_arg;
  std::vector<double> fc1_pre, fc2_pre;
  std::array<double, 2> logits{0.0, 0.0};
};

struct BagTrace {
  std::vector<InstanceTrace> instances;
};

struct BagOutput {
  std::vector<std::array<double, 2>> instance_probs; // per-instance softmax
  std::array<double, 2> bag_probs{0.0, 0.0};
  std::vector<double> embedding; // mean of instance embeddings
  AggregationMode mode = AggregationMode::mean_then_softmax;
  std::shared_ptr<const BagTrace> trace; // set when requested
};

// Flattened d(loss)/d(theta_out) under the model's own pseudo-label:
// weight block (2 x E, row-major) then bias block (2). Length 2*(E+1).
struct GradEmbedding {
  std::vector<double> g;

  double l2_norm() const;
};

// Single-instance pass: (logits, embedding). Throws on shape mismatch.
std::pair<std::array<double, 2>, std::vector<double>> forward_instance(
    const ModelParams& params, const Tensor& x);

// Bag distribution from per-instance logit rows under the given mode.
std::array<double, 2> aggregate(
    const std::vector<std::array<double, 2>>& instance_logits,
    AggregationMode mode);

BagOutput forward_bag(const ModelParams& params,
                      const std::vector<const Tensor*>& instance_feats,
                      AggregationMode mode, bool want_trace = false);
BagOutput forward_bag(const ModelParams& params, const Bag& bag,
                      const InstanceSet& instances, AggregationMode mode,
                      bool want_trace = false);

// Cross-entropy against a soft target: -sum_c target_c*log(p_c + 1e-12).
double bag_loss(const BagOutput& output, const SoftLabel& target);

// Analytic gradient at the output layer under pseudo-label argmax(bag_probs)
// (ties -> class 0). Defined for mean_then_softmax only, where bag logits
// are linear in theta_out.
GradEmbedding last_layer_gradient(const BagOutput& output);

// One training example: materialized instance features (possibly augmented)
// plus a soft bag label.
struct TrainItem {
  std::vector<Tensor> instances;
  SoftLabel target{1.0, 0.0};
};

struct Gradients {
  std::vector<std::vector<double>> g; // aligned with ModelParams::tensors
};

Gradients zero_gradients(const ModelParams& params);

// Mean bag loss over the batch plus gradients of it (no weight decay term).
// Deterministic for any thread count.
double compute_batch_gradients(const ModelParams& params,
                               const std::vector<TrainItem>& batch,
                               AggregationMode mode, Gradients& out,
                               int threads = 1);

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

AdamState init_adam(const ModelParams& params);

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) on grad + weight_decay * theta.
void adam_update(ModelParams& params, AdamState& state, const Gradients& grads,
                 double lr, double weight_decay);

// One optimizer step on the mean batch loss; returns that loss.
// Throws if the loss or any updated parameter is non-finite.
double train_step(ModelParams& params, AdamState& state,
                  const std::vector<TrainItem>& batch, AggregationMode mode,
                  double lr, double weight_decay, int threads = 1);

struct Checkpoint {
  ModelParams params;
  AggregationMode mode = AggregationMode::mean_then_softmax;
  int epoch = 0;
};

// Versioned binary blob: arch tag, shapes, raw little-endian float32
// parameters, init seed, epoch.
void save_checkpoint(const ModelParams& params, AggregationMode mode,
                     int epoch, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace weaklab
