#include "nna/layers.hpp"

#include <cmath>
#include <limits>

#include "nna/errors.hpp"

namespace nna {
namespace {

Tensor as_batch(const Tensor& x) {
  if (x.rank() == 1) return x.reshaped({1, x.size()});
  if (x.rank() != 2) throw ShapeError("expected a vector or [batch x features] matrix, got " + shape_string(x.shape()));
  return x;
}

}  // namespace

Tensor fc_preactivation(const Tensor& weight, const Tensor* bias, const Tensor& x) {
  if (x.cols() != weight.cols()) {
    throw ShapeError("fc: input width " + std::to_string(x.cols()) + " vs weight " + shape_string(weight.shape()));
  }
  Tensor pre = matmul_nt(x, weight);
  if (bias) {
    if (bias->size() != weight.rows()) throw ShapeError("fc: bias length does not match output width");
    for (std::size_t b = 0; b < pre.rows(); ++b) {
      auto r = pre.row(b);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += (*bias)[j];
    }
  }
  return pre;
}

FcTrace fc_forward_with(const Tensor& weight, const Tensor* bias, const Tensor& x, const ActivationSpec& act,
                        RngStream& rng) {
  Tensor input = as_batch(x);
  Tensor pre = fc_preactivation(weight, bias, input);
  return {std::move(input), activate(pre, act, rng)};
}

FcGrads fc_backward_with(const Tensor& weight, const FcTrace& trace, const Tensor& upstream, const ActivationSpec& act,
                         bool need_input_grad) {
  FcGrads g;
  g.pre_activation = activation_backward(trace.act, as_batch(upstream), act);
  g.weight = Tensor(weight.shape());
  matmul_tn_accumulate(g.pre_activation, trace.input, g.weight);
  g.bias = Tensor({weight.rows()});
  for (std::size_t b = 0; b < g.pre_activation.rows(); ++b) {
    auto r = g.pre_activation.row(b);
    for (std::size_t j = 0; j < r.size(); ++j) g.bias[j] += r[j];
  }
  if (need_input_grad) g.input = matmul(g.pre_activation, weight);
  return g;
}

std::pair<Tensor, FcTrace> fc_forward(const FcLayer& layer, const Tensor& x, RngStream& rng) {
  const Tensor w = layer.weight.forward_weights();
  auto trace = fc_forward_with(w, layer.use_bias ? &layer.bias.shadow : nullptr, x, layer.activation, rng);
  Tensor out = trace.act.output;
  return {std::move(out), std::move(trace)};
}

FcGrads fc_backward(const FcLayer& layer, const FcTrace& trace, const Tensor& upstream) {
  return fc_backward_with(layer.weight.forward_weights(), trace, upstream, layer.activation);
}

Tensor gru_mux(const Tensor& gate, const Tensor& h_prev, const Tensor& candidate) {
  require_same_shape(gate, h_prev, "gru_mux gate/h_prev");
  require_same_shape(gate, candidate, "gru_mux gate/candidate");
  Tensor h(gate.shape());
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = gate[i] * h_prev[i] + (1.0 - gate[i]) * candidate[i];
  return h;
}

GruStepTrace gru_step_with(const Tensor& gate_weight, const Tensor& candidate_weight, const Tensor& h_prev,
                           const Tensor& x_in, RngStream& rng, const ActivationSpec& act) {
  GruStepTrace t;
  t.h_prev = as_batch(h_prev);
  const Tensor x = as_batch(x_in);
  const std::size_t h = gate_weight.rows();
  if (t.h_prev.cols() != h || gate_weight.cols() != h + x.cols() || candidate_weight.shape() != gate_weight.shape() ||
      t.h_prev.rows() != x.rows()) {
    throw ShapeError("gru_step: h_prev " + shape_string(t.h_prev.shape()) + ", x " + shape_string(x.shape()) +
                     ", Wg " + shape_string(gate_weight.shape()) + ", Wc " + shape_string(candidate_weight.shape()));
  }
  t.concat = hconcat(t.h_prev, x);
  t.gate = activate(matmul_nt(t.concat, gate_weight), act, rng);
  t.candidate = activate(matmul_nt(t.concat, candidate_weight), act, rng);
  t.h_next = gru_mux(t.gate.output, t.h_prev, t.candidate.output);
  return t;
}

GruStepGrads gru_step_backward_with(const Tensor& gate_weight, const Tensor& candidate_weight,
                                    const GruStepTrace& trace, const Tensor& d_h_next, const ActivationSpec& act) {
  require_same_shape(trace.h_next, d_h_next, "gru backward");
  const Tensor& g = trace.gate.output;
  const Tensor& c = trace.candidate.output;
  Tensor d_gate(g.shape()), d_cand(g.shape()), d_h_direct(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    d_gate[i] = d_h_next[i] * (trace.h_prev[i] - c[i]);
    d_cand[i] = d_h_next[i] * (1.0 - g[i]);
    d_h_direct[i] = d_h_next[i] * g[i];
  }
  GruStepGrads out;
  out.gate_pre = activation_backward(trace.gate, d_gate, act);
  out.candidate_pre = activation_backward(trace.candidate, d_cand, act);
  out.gate_weight = Tensor(gate_weight.shape());
  out.candidate_weight = Tensor(candidate_weight.shape());
  matmul_tn_accumulate(out.gate_pre, trace.concat, out.gate_weight);
  matmul_tn_accumulate(out.candidate_pre, trace.concat, out.candidate_weight);

  Tensor d_concat = matmul(out.gate_pre, gate_weight);
  add_inplace(d_concat, matmul(out.candidate_pre, candidate_weight));
  const std::size_t h = gate_weight.rows();
  const std::size_t in = gate_weight.cols() - h;
  const std::size_t batch = d_concat.rows();
  out.h_prev = Tensor({batch, h});
  out.x_in = Tensor({batch, in});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto r = d_concat.row(b);
    for (std::size_t j = 0; j < h; ++j) out.h_prev.at(b, j) = r[j] + d_h_direct.at(b, j);
    for (std::size_t j = 0; j < in; ++j) out.x_in.at(b, j) = r[h + j];
  }
  return out;
}

std::pair<Tensor, GruStepTrace> gru_step(const GruLayer& layer, const Tensor& h_prev, const Tensor& x_in,
                                         RngStream& rng, const ActivationSpec& act) {
  auto trace = gru_step_with(layer.gate.forward_weights(), layer.candidate.forward_weights(), h_prev, x_in, rng, act);
  Tensor h = trace.h_next;
  return {std::move(h), std::move(trace)};
}

void ConvGeometry::validate() const {
  if (stride == 0) throw ShapeError("conv: stride must be positive");
  if (k_h > in_h || k_w > in_w || k_h == 0 || k_w == 0) {
    throw ShapeError("conv: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) + " does not fit input " +
                     std::to_string(in_h) + "x" + std::to_string(in_w));
  }
  if (pool && (conv_h() < 2 || conv_w() < 2)) throw ShapeError("conv: feature map too small for 2x2 pooling");
}

ConvGeometry conv_geometry(const ConvLayer& layer, std::size_t in_h, std::size_t in_w) {
  if (layer.kernels.shadow.rank() != 4) throw ShapeError("conv kernels must be [outC x inC x kH x kW]");
  ConvGeometry g{layer.in_channels(), in_h, in_w, layer.out_channels(), layer.kernel_h(), layer.kernel_w(),
                 layer.stride, layer.followed_by_pool};
  g.validate();
  return g;
}

Tensor im2col(const Tensor& input, const ConvGeometry& g) {
  const Tensor x = as_batch(input);
  if (x.cols() != g.in_size()) {
    throw ShapeError("conv: input width " + std::to_string(x.cols()) + " vs expected " + std::to_string(g.in_size()));
  }
  const std::size_t batch = x.rows(), ch = g.conv_h(), cw = g.conv_w(), patch = g.patch_size();
  Tensor cols({batch * ch * cw, patch});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* img = x.data() + b * g.in_size();
    for (std::size_t y = 0; y < ch; ++y) {
      for (std::size_t xx = 0; xx < cw; ++xx) {
        double* row = cols.data() + ((b * ch + y) * cw + xx) * patch;
        std::size_t k = 0;
        for (std::size_t c = 0; c < g.in_c; ++c)
          for (std::size_t ky = 0; ky < g.k_h; ++ky)
            for (std::size_t kx = 0; kx < g.k_w; ++kx)
              row[k++] = img[(c * g.in_h + y * g.stride + ky) * g.in_w + xx * g.stride + kx];
      }
    }
  }
  return cols;
}

Tensor conv_preactivation(const Tensor& kernel_matrix, const Tensor& cols) { return matmul_nt(cols, kernel_matrix); }

Tensor pool_preactivation(const Tensor& conv_pre, const ConvGeometry& g, std::size_t batch,
                          std::vector<std::size_t>* argmax) {
  const std::size_t ch = g.conv_h(), cw = g.conv_w(), oh = g.out_h(), ow = g.out_w(), oc = g.out_c;
  Tensor out({batch, g.out_size()});
  if (argmax) argmax->assign(batch * g.out_size(), 0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < oc; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          std::size_t best = 0;
          double best_v = -std::numeric_limits<double>::infinity();
          if (g.pool) {
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t pos = (b * ch + 2 * y + dy) * cw + 2 * x + dx;
                const std::size_t idx = pos * oc + c;
                if (conv_pre[idx] > best_v) {
                  best_v = conv_pre[idx];
                  best = idx;
                }
              }
          } else {
            best = ((b * ch + y) * cw + x) * oc + c;
            best_v = conv_pre[best];
          }
          const std::size_t o = (c * oh + y) * ow + x;
          out.at(b, o) = best_v;
          if (argmax) (*argmax)[b * g.out_size() + o] = best;
        }
      }
    }
  }
  return out;
}

ConvTrace conv_forward_with(const Tensor& kernel_matrix, const ConvGeometry& g, const Tensor& input,
                            const ActivationSpec& act, RngStream& rng) {
  ConvTrace t;
  const Tensor x = as_batch(input);
  t.cols = im2col(x, g);
  t.conv_pre = conv_preactivation(kernel_matrix, t.cols);
  const Tensor pooled = pool_preactivation(t.conv_pre, g, x.rows(), &t.argmax);
  t.act = activate(pooled, act, rng);
  return t;
}

ConvGrads conv_backward_with(const Tensor& kernel_matrix, const ConvGeometry& g, const ConvTrace& trace,
                             const Tensor& upstream, const ActivationSpec& act, bool need_input_grad) {
  ConvGrads out;
  out.pre_activation = activation_backward(trace.act, as_batch(upstream), act);
  const std::size_t batch = out.pre_activation.rows();
  Tensor d_conv(trace.conv_pre.shape());
  for (std::size_t i = 0; i < trace.argmax.size(); ++i) d_conv[trace.argmax[i]] += out.pre_activation[i];
  out.kernels = Tensor(kernel_matrix.shape());
  matmul_tn_accumulate(d_conv, trace.cols, out.kernels);
  if (!need_input_grad) return out;
  const Tensor d_cols = matmul(d_conv, kernel_matrix);
  out.input = Tensor({batch, g.in_size()});
  const std::size_t ch = g.conv_h(), cw = g.conv_w(), patch = g.patch_size();
  for (std::size_t b = 0; b < batch; ++b) {
    double* img = out.input.data() + b * g.in_size();
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t xx = 0; xx < cw; ++xx) {
        const double* row = d_cols.data() + ((b * ch + y) * cw + xx) * patch;
        std::size_t k = 0;
        for (std::size_t c = 0; c < g.in_c; ++c)
          for (std::size_t ky = 0; ky < g.k_h; ++ky)
            for (std::size_t kx = 0; kx < g.k_w; ++kx)
              img[(c * g.in_h + y * g.stride + ky) * g.in_w + xx * g.stride + kx] += row[k++];
      }
  }
  return out;
}

std::pair<Tensor, ConvTrace> conv_forward(const ConvLayer& layer, std::size_t in_h, std::size_t in_w,
                                          const Tensor& input, RngStream& rng) {
  const auto g = conv_geometry(layer, in_h, in_w);
  const Tensor k = layer.kernels.forward_weights().reshaped({g.out_c, g.patch_size()});
  auto trace = conv_forward_with(k, g, input, layer.activation, rng);
  Tensor out = trace.act.output;
  return {std::move(out), std::move(trace)};
}

ConvGrads conv_backward(const ConvLayer& layer, std::size_t in_h, std::size_t in_w, const ConvTrace& trace,
                        const Tensor& upstream) {
  const auto g = conv_geometry(layer, in_h, in_w);
  const Tensor k = layer.kernels.forward_weights().reshaped({g.out_c, g.patch_size()});
  auto grads = conv_backward_with(k, g, trace, upstream, layer.activation);
  grads.kernels = grads.kernels.reshaped(layer.kernels.shadow.shape());
  return grads;
}

Tensor glorot_uniform(RngStream& rng, const Shape& shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(shape);
  for (auto& v : w.values()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

}  // namespace nna
