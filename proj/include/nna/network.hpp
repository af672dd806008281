#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "nna/activations.hpp"
#include "nna/layers.hpp"

namespace nna {

/// Input FC encoder, a stack of reset-gate-free GRU layers and a digital output head.
/// The head reads the top layer's hidden state at the final timestep.
struct GruStack {
  FcLayer input;
  std::vector<GruLayer> layers;
  FcLayer head;

  std::size_t input_dim() const { return input.in_features(); }
};

/// Conv/pool feature extractor followed by binary FC layers and a digital output head.
struct ConvNet {
  std::size_t in_c = 1, in_h = 0, in_w = 0;
  std::vector<ConvLayer> convs;
  std::vector<FcLayer> hidden;
  FcLayer head;

  std::vector<ConvGeometry> geometries() const;
};

enum class Architecture { GruStack = 1, ConvNet = 2 };

struct NetworkGraph {
  std::variant<GruStack, ConvNet> body;
  /// Neuron function of the most recent training stage.
  ActivationSpec activation;

  Architecture architecture() const {
    return std::holds_alternative<GruStack>(body) ? Architecture::GruStack : Architecture::ConvNet;
  }
  std::size_t num_classes() const;
  void validate() const;
};

struct GruStackConfig {
  std::size_t input_dim = 8;
  std::size_t input_units = 32;
  std::size_t hidden = 32;
  std::size_t num_layers = 2;
  std::size_t num_classes = 12;
  bool input_bias = false;
};

struct ConvNetConfig {
  std::size_t in_c = 1, in_h = 28, in_w = 28;
  std::vector<std::size_t> conv_channels{6, 16};
  std::size_t kernel = 5;
  std::vector<std::size_t> fc_hidden{120};
  std::size_t num_classes = 10;
};

NetworkGraph make_gru_stack(const GruStackConfig& cfg, RngStream& rng);
NetworkGraph make_conv_net(const ConvNetConfig& cfg, RngStream& rng);

/// A trainable tensor. `in_array` marks weights that live in a PIM array
/// (quantizable); the head and biases stay digital and full precision.
struct ParamRef {
  std::string name;
  QuantizedWeight* weight;
  bool in_array;
};

struct ConstParamRef {
  std::string name;
  const QuantizedWeight* weight;
  bool in_array;
};

std::vector<ParamRef> parameters(NetworkGraph& net);
std::vector<ConstParamRef> parameters(const NetworkGraph& net);
std::size_t parameter_count(const NetworkGraph& net);

/// Quantized copies of every parameter, aligned with parameters().
using ForwardWeights = std::vector<Tensor>;
ForwardWeights prepare_weights(const NetworkGraph& net);

/// Examples referenced by a batch. Sequences are [T x D], images are flat [C*H*W] (any shape).
struct Batch {
  std::vector<const Tensor*> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

struct GruStackTrace {
  std::vector<FcTrace> input;                    // per timestep
  std::vector<std::vector<GruStepTrace>> steps;  // [t][layer]
  Tensor head_input;
  Tensor logits;
};

struct ConvNetTrace {
  std::vector<ConvTrace> convs;
  std::vector<FcTrace> hidden;
  Tensor head_input;
  Tensor logits;
};

using NetworkTrace = std::variant<GruStackTrace, ConvNetTrace>;

NetworkTrace forward(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch, const ActivationSpec& act,
                     RngStream& rng);

/// Per-step gradients of the GRU stack: dL/dh (total) for every (t, layer),
/// and dL/d(pre-activation) for every noise-injected node.
struct GruStackBackward {
  std::vector<Tensor> input_pre;                 // [t] -> [B x h0]
  std::vector<std::vector<Tensor>> d_hidden;     // [t][layer] -> [B x h]
  std::vector<std::vector<Tensor>> gate_pre;     // [t][layer]
  std::vector<std::vector<Tensor>> candidate_pre;
};

struct ConvNetBackward {
  std::vector<Tensor> conv_pre;    // [layer] -> [B x out_size]
  std::vector<Tensor> hidden_pre;  // [layer] -> [B x units]
};

using NetworkBackward = std::variant<GruStackBackward, ConvNetBackward>;

/// Softmax cross-entropy summed over the batch and multiplied by loss_scale.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, double loss_scale, Tensor* d_logits);
Tensor softmax_rows(const Tensor& logits);

/// Exact gradients of loss_scale * sum_b CE_b with every noise sample held at
/// its forward value. `grads` is resized to match parameters(net).
NetworkBackward backward(const NetworkGraph& net, const ForwardWeights& w, const NetworkTrace& trace,
                         const Batch& batch, const ActivationSpec& act, double loss_scale,
                         std::vector<Tensor>& grads, double* loss = nullptr);

/// Forward + backward in one call; returns the loss.
double loss_and_gradients(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch,
                          const ActivationSpec& act, RngStream& rng, double loss_scale, std::vector<Tensor>& grads);

const Tensor& logits_of(const NetworkTrace& trace);
std::vector<int> argmax_rows(const Tensor& logits);
std::vector<int> predict(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch,
                         const ActivationSpec& act, RngStream& rng);

/// Visits every noise-injected pre-activation tensor of a trace with a group name.
template <class Fn>
void for_each_preactivation(const NetworkTrace& trace, Fn&& fn) {
  if (const auto* g = std::get_if<GruStackTrace>(&trace)) {
    for (const auto& t : g->input) fn(std::string("input"), t.act.pre_activation);
    for (const auto& per_t : g->steps)
      for (std::size_t l = 0; l < per_t.size(); ++l) {
        fn("gru" + std::to_string(l) + ".gate", per_t[l].gate.pre_activation);
        fn("gru" + std::to_string(l) + ".candidate", per_t[l].candidate.pre_activation);
      }
  } else {
    const auto& c = std::get<ConvNetTrace>(trace);
    for (std::size_t l = 0; l < c.convs.size(); ++l) fn("conv" + std::to_string(l), c.convs[l].act.pre_activation);
    for (std::size_t l = 0; l < c.hidden.size(); ++l) fn("fc" + std::to_string(l), c.hidden[l].act.pre_activation);
  }
}

}  // namespace nna
