#include "nna/network.hpp"

#include <algorithm>
#include <cmath>

#include "nna/errors.hpp"

namespace nna {
namespace {

FcLayer make_fc(RngStream& rng, std::size_t in, std::size_t out, bool use_bias) {
  FcLayer fc;
  fc.weight.shadow = glorot_uniform(rng, {out, in}, in, out);
  fc.bias.shadow = Tensor({out});
  fc.use_bias = use_bias;
  return fc;
}

FcLayer make_head(RngStream& rng, std::size_t in, std::size_t classes) { return make_fc(rng, in, classes, true); }

template <class Ref, class Net>
std::vector<Ref> collect_parameters(Net& net) {
  std::vector<Ref> out;
  auto add_fc = [&](const std::string& name, auto& fc, bool in_array) {
    out.push_back({name + ".weight", &fc.weight, in_array});
    if (fc.use_bias) out.push_back({name + ".bias", &fc.bias, false});
  };
  if (auto* g = std::get_if<GruStack>(&net.body)) {
    add_fc("input", g->input, true);
    for (std::size_t l = 0; l < g->layers.size(); ++l) {
      out.push_back({"gru" + std::to_string(l) + ".gate", &g->layers[l].gate, true});
      out.push_back({"gru" + std::to_string(l) + ".candidate", &g->layers[l].candidate, true});
    }
    add_fc("head", g->head, false);
  } else {
    auto& c = std::get<ConvNet>(net.body);
    for (std::size_t l = 0; l < c.convs.size(); ++l) {
      out.push_back({"conv" + std::to_string(l) + ".kernels", &c.convs[l].kernels, true});
    }
    for (std::size_t l = 0; l < c.hidden.size(); ++l) add_fc("fc" + std::to_string(l), c.hidden[l], true);
    add_fc("head", c.head, false);
  }
  return out;
}

Tensor gather_timestep(const Batch& batch, std::size_t t, std::size_t dim) {
  Tensor x({batch.size(), dim});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor& seq = *batch.inputs[b];
    std::copy_n(seq.data() + t * dim, dim, x.data() + b * dim);
  }
  return x;
}

Tensor gather_flat(const Batch& batch, std::size_t width) {
  Tensor x({batch.size(), width});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch.inputs[b]->size() != width) {
      throw ShapeError("input example " + std::to_string(b) + " has " + std::to_string(batch.inputs[b]->size()) +
                       " values, network expects " + std::to_string(width));
    }
    std::copy_n(batch.inputs[b]->data(), width, x.data() + b * width);
  }
  return x;
}

}  // namespace

std::vector<ConvGeometry> ConvNet::geometries() const {
  std::vector<ConvGeometry> gs;
  std::size_t h = in_h, w = in_w, c = in_c;
  for (const auto& layer : convs) {
    auto g = conv_geometry(layer, h, w);
    if (g.in_c != c) throw ShapeError("conv layer expects " + std::to_string(g.in_c) + " channels, got " + std::to_string(c));
    gs.push_back(g);
    h = g.out_h();
    w = g.out_w();
    c = g.out_c;
  }
  return gs;
}

std::size_t NetworkGraph::num_classes() const {
  return std::visit([](const auto& b) { return b.head.out_features(); }, body);
}

void NetworkGraph::validate() const {
  if (const auto* g = std::get_if<GruStack>(&body)) {
    std::size_t below = g->input.out_features();
    for (const auto& layer : g->layers) {
      const auto h = layer.hidden_size;
      if (layer.gate.shadow.shape() != Shape{h, h + below} || layer.candidate.shadow.shape() != Shape{h, h + below}) {
        throw ShapeError("GRU layer weights must be [" + std::to_string(h) + " x " + std::to_string(h + below) + "]");
      }
      below = h;
    }
    if (g->head.in_features() != below) throw ShapeError("output head width does not match top GRU layer");
  } else {
    const auto& c = std::get<ConvNet>(body);
    const auto gs = c.geometries();
    std::size_t width = gs.empty() ? c.in_c * c.in_h * c.in_w : gs.back().out_size();
    for (const auto& fc : c.hidden) {
      if (fc.in_features() != width) throw ShapeError("hidden FC input width mismatch");
      width = fc.out_features();
    }
    if (c.head.in_features() != width) throw ShapeError("output head width mismatch");
  }
}

NetworkGraph make_gru_stack(const GruStackConfig& cfg, RngStream& rng) {
  if (cfg.num_layers == 0 || cfg.hidden == 0 || cfg.input_units == 0 || cfg.input_dim == 0 || cfg.num_classes < 2) {
    throw ParameterError("GRU stack dimensions must be positive and num_classes >= 2");
  }
  GruStack g;
  g.input = make_fc(rng, cfg.input_dim, cfg.input_units, cfg.input_bias);
  std::size_t below = cfg.input_units;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    GruLayer layer;
    layer.hidden_size = cfg.hidden;
    const std::size_t fan_in = cfg.hidden + below;
    layer.gate.shadow = glorot_uniform(rng, {cfg.hidden, fan_in}, fan_in, cfg.hidden);
    layer.candidate.shadow = glorot_uniform(rng, {cfg.hidden, fan_in}, fan_in, cfg.hidden);
    g.layers.push_back(std::move(layer));
    below = cfg.hidden;
  }
  g.head = make_head(rng, cfg.hidden, cfg.num_classes);
  NetworkGraph net{std::move(g), ActivationSpec::fp_sigmoid()};
  net.validate();
  return net;
}

NetworkGraph make_conv_net(const ConvNetConfig& cfg, RngStream& rng) {
  ConvNet c;
  c.in_c = cfg.in_c;
  c.in_h = cfg.in_h;
  c.in_w = cfg.in_w;
  std::size_t ch = cfg.in_c;
  for (auto out : cfg.conv_channels) {
    ConvLayer layer;
    const std::size_t fan_in = ch * cfg.kernel * cfg.kernel, fan_out = out * cfg.kernel * cfg.kernel;
    layer.kernels.shadow = glorot_uniform(rng, {out, ch, cfg.kernel, cfg.kernel}, fan_in, fan_out);
    layer.stride = 1;
    layer.followed_by_pool = true;
    c.convs.push_back(std::move(layer));
    ch = out;
  }
  const auto gs = c.geometries();
  std::size_t width = gs.empty() ? cfg.in_c * cfg.in_h * cfg.in_w : gs.back().out_size();
  for (auto units : cfg.fc_hidden) {
    c.hidden.push_back(make_fc(rng, width, units, false));
    width = units;
  }
  c.head = make_head(rng, width, cfg.num_classes);
  NetworkGraph net{std::move(c), ActivationSpec::fp_sigmoid()};
  net.validate();
  return net;
}

std::vector<ParamRef> parameters(NetworkGraph& net) { return collect_parameters<ParamRef>(net); }
std::vector<ConstParamRef> parameters(const NetworkGraph& net) { return collect_parameters<ConstParamRef>(net); }

std::size_t parameter_count(const NetworkGraph& net) {
  std::size_t n = 0;
  for (const auto& p : parameters(net)) n += p.weight->shadow.size();
  return n;
}

ForwardWeights prepare_weights(const NetworkGraph& net) {
  ForwardWeights w;
  for (const auto& p : parameters(net)) w.push_back(p.weight->forward_weights());
  return w;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor p(logits.shape());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto r = logits.row(b);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) z += std::exp(r[j] - m);
    for (std::size_t j = 0; j < r.size(); ++j) p.at(b, j) = std::exp(r[j] - m) / z;
  }
  return p;
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels, double loss_scale, Tensor* d_logits) {
  if (labels.size() != logits.rows()) throw ShapeError("cross_entropy: label count does not match batch");
  double loss = 0.0;
  const std::size_t k = logits.cols();
  if (d_logits) *d_logits = Tensor(logits.shape());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto r = logits.row(b);
    const auto y = static_cast<std::size_t>(labels[b]);
    if (labels[b] < 0 || y >= k) throw ParameterError("label out of range");
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(r[j] - m);
    const double log_z = m + std::log(z);
    loss += loss_scale * (log_z - r[y]);
    if (d_logits) {
      for (std::size_t j = 0; j < k; ++j) d_logits->at(b, j) = loss_scale * std::exp(r[j] - log_z);
      d_logits->at(b, y) -= loss_scale;
    }
  }
  return loss;
}

NetworkTrace forward(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch, const ActivationSpec& act,
                     RngStream& rng) {
  if (batch.size() == 0) throw ShapeError("forward: empty batch");
  std::size_t idx = 0;
  if (const auto* g = std::get_if<GruStack>(&net.body)) {
    GruStackTrace tr;
    const Tensor& first = *batch.inputs[0];
    if (first.rank() != 2 || first.dim(1) != g->input_dim()) {
      throw ShapeError("GRU input must be [T x " + std::to_string(g->input_dim()) + "], got " +
                       shape_string(first.shape()));
    }
    const std::size_t T = first.dim(0), D = first.dim(1);
    for (const auto* s : batch.inputs) {
      if (s->shape() != first.shape()) throw ShapeError("all sequences in a batch must share one length");
    }
    const Tensor& w_in = w[idx++];
    const Tensor* b_in = g->input.use_bias ? &w[idx++] : nullptr;
    std::vector<std::pair<const Tensor*, const Tensor*>> gw;
    for (std::size_t l = 0; l < g->layers.size(); ++l) {
      gw.emplace_back(&w[idx], &w[idx + 1]);
      idx += 2;
    }
    const Tensor& w_head = w[idx++];
    const Tensor& b_head = w[idx++];

    std::vector<Tensor> h(g->layers.size());
    for (std::size_t l = 0; l < g->layers.size(); ++l) h[l] = Tensor({batch.size(), g->layers[l].hidden_size});
    tr.steps.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      tr.input.push_back(fc_forward_with(w_in, b_in, gather_timestep(batch, t, D), act, rng));
      const Tensor* below = &tr.input.back().act.output;
      for (std::size_t l = 0; l < g->layers.size(); ++l) {
        tr.steps[t].push_back(gru_step_with(*gw[l].first, *gw[l].second, h[l], *below, rng, act));
        h[l] = tr.steps[t].back().h_next;
        below = &tr.steps[t].back().h_next;
      }
    }
    tr.head_input = h.back();
    tr.logits = fc_preactivation(w_head, &b_head, tr.head_input);
    return tr;
  }

  const auto& c = std::get<ConvNet>(net.body);
  ConvNetTrace tr;
  const auto gs = c.geometries();
  Tensor x = gather_flat(batch, c.in_c * c.in_h * c.in_w);
  for (std::size_t l = 0; l < c.convs.size(); ++l) {
    const Tensor k = w[idx++].reshaped({gs[l].out_c, gs[l].patch_size()});
    tr.convs.push_back(conv_forward_with(k, gs[l], x, act, rng));
    x = tr.convs.back().act.output;
  }
  for (const auto& fc : c.hidden) {
    const Tensor& wf = w[idx++];
    const Tensor* bf = fc.use_bias ? &w[idx++] : nullptr;
    tr.hidden.push_back(fc_forward_with(wf, bf, x, act, rng));
    x = tr.hidden.back().act.output;
  }
  const Tensor& w_head = w[idx++];
  const Tensor& b_head = w[idx++];
  tr.head_input = x;
  tr.logits = fc_preactivation(w_head, &b_head, tr.head_input);
  return tr;
}

const Tensor& logits_of(const NetworkTrace& trace) {
  return std::visit([](const auto& t) -> const Tensor& { return t.logits; }, trace);
}

NetworkBackward backward(const NetworkGraph& net, const ForwardWeights& w, const NetworkTrace& trace,
                         const Batch& batch, const ActivationSpec& act, double loss_scale,
                         std::vector<Tensor>& grads, double* loss) {
  if (!act.differentiable()) {
    throw ConfigurationError("backward requires a differentiable activation, got '" + std::string(to_string(act.kind)) +
                             "'");
  }
  const auto params = parameters(net);
  grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads[i] = Tensor(params[i].weight->shadow.shape());

  Tensor d_logits;
  const double l = cross_entropy(logits_of(trace), batch.labels, loss_scale, &d_logits);
  if (loss) *loss = l;

  if (const auto* g = std::get_if<GruStack>(&net.body)) {
    const auto& tr = std::get<GruStackTrace>(trace);
    const std::size_t L = g->layers.size(), T = tr.steps.size();
    std::size_t idx = 0;
    const std::size_t i_in = idx++;
    const std::size_t i_in_bias = g->input.use_bias ? idx++ : 0;
    const std::size_t i_gru = idx;
    idx += 2 * L;
    const std::size_t i_head = idx++;
    const std::size_t i_head_bias = idx++;

    matmul_tn_accumulate(d_logits, tr.head_input, grads[i_head]);
    for (std::size_t b = 0; b < d_logits.rows(); ++b)
      for (std::size_t j = 0; j < d_logits.cols(); ++j) grads[i_head_bias][j] += d_logits.at(b, j);

    GruStackBackward out;
    out.input_pre.resize(T);
    out.d_hidden.assign(T, std::vector<Tensor>(L));
    out.gate_pre.assign(T, std::vector<Tensor>(L));
    out.candidate_pre.assign(T, std::vector<Tensor>(L));

    // d_future[l]: gradient reaching h^l_t from timestep t+1
    std::vector<Tensor> d_future(L);
    for (std::size_t l = 0; l < L; ++l) d_future[l] = Tensor({batch.size(), g->layers[l].hidden_size});
    add_inplace(d_future[L - 1], matmul(d_logits, w[i_head]));

    for (std::size_t t = T; t-- > 0;) {
      Tensor d_from_above;
      for (std::size_t l = L; l-- > 0;) {
        Tensor d_h = d_future[l];
        if (l + 1 < L) add_inplace(d_h, d_from_above);
        out.d_hidden[t][l] = d_h;
        const Tensor& wg = w[i_gru + 2 * l];
        const Tensor& wc = w[i_gru + 2 * l + 1];
        auto sg = gru_step_backward_with(wg, wc, tr.steps[t][l], d_h, act);
        add_inplace(grads[i_gru + 2 * l], sg.gate_weight);
        add_inplace(grads[i_gru + 2 * l + 1], sg.candidate_weight);
        d_future[l] = std::move(sg.h_prev);
        d_from_above = std::move(sg.x_in);
        out.gate_pre[t][l] = std::move(sg.gate_pre);
        out.candidate_pre[t][l] = std::move(sg.candidate_pre);
      }
      auto fg = fc_backward_with(w[i_in], tr.input[t], d_from_above, act, false);
      add_inplace(grads[i_in], fg.weight);
      if (g->input.use_bias) add_inplace(grads[i_in_bias], fg.bias);
      out.input_pre[t] = std::move(fg.pre_activation);
    }
    return out;
  }

  const auto& c = std::get<ConvNet>(net.body);
  const auto& tr = std::get<ConvNetTrace>(trace);
  const auto gs = c.geometries();
  std::vector<std::size_t> conv_idx, fc_idx, fc_bias_idx;
  std::size_t idx = 0;
  for (std::size_t l = 0; l < c.convs.size(); ++l) conv_idx.push_back(idx++);
  for (const auto& fc : c.hidden) {
    fc_idx.push_back(idx++);
    fc_bias_idx.push_back(fc.use_bias ? idx++ : 0);
  }
  const std::size_t i_head = idx++;
  const std::size_t i_head_bias = idx++;

  matmul_tn_accumulate(d_logits, tr.head_input, grads[i_head]);
  for (std::size_t b = 0; b < d_logits.rows(); ++b)
    for (std::size_t j = 0; j < d_logits.cols(); ++j) grads[i_head_bias][j] += d_logits.at(b, j);
  Tensor d_x = matmul(d_logits, w[i_head]);

  ConvNetBackward out;
  out.hidden_pre.resize(c.hidden.size());
  out.conv_pre.resize(c.convs.size());
  for (std::size_t l = c.hidden.size(); l-- > 0;) {
    auto fg = fc_backward_with(w[fc_idx[l]], tr.hidden[l], d_x, act, true);
    add_inplace(grads[fc_idx[l]], fg.weight);
    if (c.hidden[l].use_bias) add_inplace(grads[fc_bias_idx[l]], fg.bias);
    d_x = std::move(fg.input);
    out.hidden_pre[l] = std::move(fg.pre_activation);
  }
  for (std::size_t l = c.convs.size(); l-- > 0;) {
    const Tensor k = w[conv_idx[l]].reshaped({gs[l].out_c, gs[l].patch_size()});
    auto cg = conv_backward_with(k, gs[l], tr.convs[l], d_x, act, l > 0);
    add_inplace(grads[conv_idx[l]], cg.kernels.reshaped(grads[conv_idx[l]].shape()));
    d_x = std::move(cg.input);
    out.conv_pre[l] = std::move(cg.pre_activation);
  }
  return out;
}

double loss_and_gradients(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch,
                          const ActivationSpec& act, RngStream& rng, double loss_scale, std::vector<Tensor>& grads) {
  const auto trace = forward(net, w, batch, act, rng);
  double loss = 0.0;
  backward(net, w, trace, batch, act, loss_scale, grads, &loss);
  return loss;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto r = logits.row(b);
    out[b] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

std::vector<int> predict(const NetworkGraph& net, const ForwardWeights& w, const Batch& batch,
                         const ActivationSpec& act, RngStream& rng) {
  return argmax_rows(logits_of(forward(net, w, batch, act, rng)));
}

}  // namespace nna
