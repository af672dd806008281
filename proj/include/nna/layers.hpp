#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "nna/activations.hpp"
#include "nna/quantizer.hpp"
#include "nna/rng.hpp"
#include "nna/tensor.hpp"

namespace nna {

// All layer functions work on batch-major matrices: one example per row.
// A rank-1 input is treated as a batch of one.

struct FcLayer {
  QuantizedWeight weight;  // [out x in]
  QuantizedWeight bias;    // [out], FP; ignored unless use_bias
  bool use_bias = false;
  ActivationSpec activation;

  std::size_t in_features() const { return weight.shadow.dim(1); }
  std::size_t out_features() const { return weight.shadow.dim(0); }
};

struct FcTrace {
  Tensor input;  // [B x in]
  ActivationTrace act;
};

struct FcGrads {
  Tensor weight;          // [out x in]
  Tensor bias;            // [out]
  Tensor input;           // [B x in]
  Tensor pre_activation;  // [B x out]
};

/// Pre-activation W x + b with explicit forward weights (already quantized).
Tensor fc_preactivation(const Tensor& weight, const Tensor* bias, const Tensor& x);
FcTrace fc_forward_with(const Tensor& weight, const Tensor* bias, const Tensor& x, const ActivationSpec& act,
                        RngStream& rng);
FcGrads fc_backward_with(const Tensor& weight, const FcTrace& trace, const Tensor& upstream, const ActivationSpec& act,
                         bool need_input_grad = true);

std::pair<Tensor, FcTrace> fc_forward(const FcLayer& layer, const Tensor& x, RngStream& rng);
FcGrads fc_backward(const FcLayer& layer, const FcTrace& trace, const Tensor& upstream);

/// Reset-gate-free GRU. Weight columns are ordered [h_prev, x_in].
struct GruLayer {
  QuantizedWeight gate;       // Wg [h x (h + in)]
  QuantizedWeight candidate;  // Wc [h x (h + in)]
  std::size_t hidden_size = 0;

  std::size_t input_size() const { return gate.shadow.dim(1) - hidden_size; }
};

struct GruStepTrace {
  Tensor h_prev;  // [B x h]
  Tensor concat;  // [B x (h + in)]
  ActivationTrace gate;
  ActivationTrace candidate;
  Tensor h_next;
};

struct GruStepGrads {
  Tensor gate_weight;
  Tensor candidate_weight;
  Tensor gate_pre;       // dL/dG~
  Tensor candidate_pre;  // dL/dC~
  Tensor h_prev;         // dL/dh_prev through all paths of this step
  Tensor x_in;
};

/// h_next = g * h_prev + (1 - g) * c
Tensor gru_mux(const Tensor& gate, const Tensor& h_prev, const Tensor& candidate);

GruStepTrace gru_step_with(const Tensor& gate_weight, const Tensor& candidate_weight, const Tensor& h_prev,
                           const Tensor& x_in, RngStream& rng, const ActivationSpec& act);
/// Backward of one step given dL/dh_next (total, from every consumer of h_next).
GruStepGrads gru_step_backward_with(const Tensor& gate_weight, const Tensor& candidate_weight,
                                    const GruStepTrace& trace, const Tensor& d_h_next, const ActivationSpec& act);

std::pair<Tensor, GruStepTrace> gru_step(const GruLayer& layer, const Tensor& h_prev, const Tensor& x_in,
                                         RngStream& rng, const ActivationSpec& act);

/// Valid cross-correlation, optional 2x2/stride-2 max pool, then activation.
struct ConvLayer {
  QuantizedWeight kernels;  // [outC x inC x kH x kW]
  std::size_t stride = 1;
  bool followed_by_pool = true;
  ActivationSpec activation;

  std::size_t out_channels() const { return kernels.shadow.dim(0); }
  std::size_t in_channels() const { return kernels.shadow.dim(1); }
  std::size_t kernel_h() const { return kernels.shadow.dim(2); }
  std::size_t kernel_w() const { return kernels.shadow.dim(3); }
};

struct ConvGeometry {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_c = 0, k_h = 0, k_w = 0, stride = 1;
  bool pool = false;

  std::size_t conv_h() const { return (in_h - k_h) / stride + 1; }
  std::size_t conv_w() const { return (in_w - k_w) / stride + 1; }
  std::size_t out_h() const { return pool ? conv_h() / 2 : conv_h(); }
  std::size_t out_w() const { return pool ? conv_w() / 2 : conv_w(); }
  std::size_t in_size() const { return in_c * in_h * in_w; }
  std::size_t out_size() const { return out_c * out_h() * out_w(); }
  std::size_t patch_size() const { return in_c * k_h * k_w; }
  std::size_t positions() const { return conv_h() * conv_w(); }

  void validate() const;
};

ConvGeometry conv_geometry(const ConvLayer& layer, std::size_t in_h, std::size_t in_w);

struct ConvTrace {
  Tensor cols;                        // [B*P x patch]
  std::vector<std::size_t> argmax;    // per pooled output (B*outsize): flat index into conv pre
  Tensor conv_pre;                    // [B*P x outC]
  ActivationTrace act;                // pre_activation/output: [B x out_size], channel-major
};

struct ConvGrads {
  Tensor kernels;         // [outC x patch]
  Tensor input;           // [B x in_size]
  Tensor pre_activation;  // [B x out_size] (post-pool pre-activation)
};

/// Patch matrix: row (b, y, x), column (c, ky, kx).
Tensor im2col(const Tensor& input, const ConvGeometry& g);
/// Conv pre-activations before pooling, [B*P x outC].
Tensor conv_preactivation(const Tensor& kernel_matrix, const Tensor& cols);
/// Pools conv pre-activations into [B x out_size] (identity reshuffle when no pool).
Tensor pool_preactivation(const Tensor& conv_pre, const ConvGeometry& g, std::size_t batch,
                          std::vector<std::size_t>* argmax);

ConvTrace conv_forward_with(const Tensor& kernel_matrix, const ConvGeometry& g, const Tensor& input,
                            const ActivationSpec& act, RngStream& rng);
ConvGrads conv_backward_with(const Tensor& kernel_matrix, const ConvGeometry& g, const ConvTrace& trace,
                             const Tensor& upstream, const ActivationSpec& act, bool need_input_grad = true);

std::pair<Tensor, ConvTrace> conv_forward(const ConvLayer& layer, std::size_t in_h, std::size_t in_w,
                                          const Tensor& input, RngStream& rng);
ConvGrads conv_backward(const ConvLayer& layer, std::size_t in_h, std::size_t in_w, const ConvTrace& trace,
                        const Tensor& upstream);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(RngStream& rng, const Shape& shape, std::size_t fan_in, std::size_t fan_out);

}  // namespace nna
