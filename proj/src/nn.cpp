#include "advlab/nn.hpp"

#include "advlab/objectives.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace advlab::nn {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void spec_fail(std::size_t layer, const std::string& kind, const std::string& msg) {
  throw ShapeError("layer " + std::to_string(layer) + " (" + kind + "): " + msg);
}

}  // namespace

std::string layer_kind(const LayerSpec& layer) {
  return std::visit(overloaded{[](const Dense&) { return std::string("dense"); },
                               [](const Conv&) { return std::string("conv"); },
                               [](const ReLU&) { return std::string("relu"); },
                               [](const BatchNorm&) { return std::string("batchnorm"); },
                               [](const AvgPool&) { return std::string("avgpool"); },
                               [](const MaxPool&) { return std::string("maxpool"); },
                               [](const Flatten&) { return std::string("flatten"); }},
                    layer);
}

std::vector<Shape> NetworkSpec::activation_shapes() const {
  if (input.empty()) throw ShapeError("network '" + name + "': empty input shape");
  if (classes == 0) throw ShapeError("network '" + name + "': zero classes");
  std::vector<Shape> shapes;
  Shape cur = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto kind = layer_kind(layers[i]);
    std::visit(overloaded{
                   [&](const Dense& l) {
                     if (cur.size() != 1 || cur[0] != l.in)
                       spec_fail(i, kind, "expects [" + std::to_string(l.in) + "], got " + shape_str(cur));
                     if (l.out == 0) spec_fail(i, kind, "zero outputs");
                     cur = Shape{l.out};
                   },
                   [&](const Conv& l) {
                     if (cur.size() != 3 || cur[0] != l.in_ch)
                       spec_fail(i, kind, "expects [" + std::to_string(l.in_ch) + ",H,W], got " + shape_str(cur));
                     l.geom.validate();
                     cur = Shape{l.out_ch, l.geom.out_h(cur[1]), l.geom.out_w(cur[2])};
                   },
                   [&](const ReLU&) {},
                   [&](const BatchNorm& l) {
                     if (cur[0] != l.channels || (cur.size() != 1 && cur.size() != 3))
                       spec_fail(i, kind, std::to_string(l.channels) + " channels vs input " + shape_str(cur));
                   },
                   [&](const AvgPool& l) {
                     if (cur.size() != 3 || cur[1] % l.mask.h || cur[2] % l.mask.w)
                       spec_fail(i, kind, "window does not divide " + shape_str(cur));
                     cur = Shape{cur[0], cur[1] / l.mask.h, cur[2] / l.mask.w};
                   },
                   [&](const MaxPool& l) {
                     if (cur.size() != 3 || cur[1] % l.mask.h || cur[2] % l.mask.w)
                       spec_fail(i, kind, "window does not divide " + shape_str(cur));
                     cur = Shape{cur[0], cur[1] / l.mask.h, cur[2] / l.mask.w};
                   },
                   [&](const Flatten&) { cur = Shape{shape_numel(cur)}; }},
               layers[i]);
    shapes.push_back(cur);
  }
  if (cur != Shape{classes})
    throw ShapeError("network '" + name + "': last layer emits " + shape_str(cur) + ", expected [" +
                     std::to_string(classes) + "] logits");
  return shapes;
}

std::vector<std::size_t> NetworkSpec::fan_in() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) {
    if (const auto* d = std::get_if<Dense>(&l)) out.push_back(d->in);
    else if (const auto* c = std::get_if<Conv>(&l)) out.push_back(c->in_ch * c->geom.kernel_h * c->geom.kernel_w);
    else out.push_back(0);
  }
  return out;
}

double init_gain(const NetworkSpec& spec, std::size_t layer) {
  for (std::size_t j = layer + 1; j < spec.layers.size(); ++j) {
    if (std::holds_alternative<BatchNorm>(spec.layers[j])) continue;
    return std::holds_alternative<ReLU>(spec.layers[j]) ? 2.0 : 1.0;
  }
  return 1.0;
}

std::size_t Network::num_params() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

std::vector<std::size_t> Network::weight_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (std::holds_alternative<Dense>(l) || std::holds_alternative<Conv>(l)) out.push_back(param_offset[i]);
  }
  return out;
}

namespace {

Network allocate(const NetworkSpec& spec) {
  spec.validate();
  Network net;
  net.spec = spec;
  for (const auto& l : spec.layers) {
    net.param_offset.push_back(net.params.size());
    net.buffer_offset.push_back(net.buffers.size());
    std::visit(overloaded{[&](const Dense& d) {
                            net.params.emplace_back(Shape{d.out, d.in});
                            if (d.bias) net.params.emplace_back(Shape{d.out});
                          },
                          [&](const Conv& c) {
                            net.params.emplace_back(Shape{c.out_ch, c.in_ch, c.geom.kernel_h, c.geom.kernel_w});
                            if (c.bias) net.params.emplace_back(Shape{c.out_ch});
                          },
                          [&](const BatchNorm& b) {
                            net.params.emplace_back(Shape{b.channels}, 1.0);
                            net.params.emplace_back(Shape{b.channels}, 0.0);
                            net.buffers.emplace_back(Shape{b.channels}, 0.0);
                            net.buffers.emplace_back(Shape{b.channels}, 1.0);
                          },
                          [](const auto&) {}},
               l);
  }
  return net;
}

}  // namespace

Network zeros(const NetworkSpec& spec) {
  Network net = allocate(spec);
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (std::holds_alternative<BatchNorm>(spec.layers[i])) {
      for (auto& v : net.params[net.param_offset[i]].data()) v = 0.0;
    }
  return net;
}

Network he_init(const NetworkSpec& spec, std::uint64_t seed) {
  Network net = allocate(spec);
  net.seed = seed;
  std::mt19937_64 rng(seed);
  const auto fan = spec.fan_in();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (fan[i] == 0) continue;
    const double sd = std::sqrt(init_gain(spec, i) / static_cast<double>(fan[i]));
    std::normal_distribution<double> dist(0.0, sd);
    for (auto& w : net.params[net.param_offset[i]].data()) w = dist(rng);
  }
  return net;
}

std::vector<ad::Var> bind_params(ad::Tape& tape, const Network& net, bool requires_grad) {
  std::vector<ad::Var> out;
  out.reserve(net.params.size());
  for (const auto& p : net.params) out.push_back(tape.leaf(p, requires_grad));
  return out;
}

namespace {

// Shape [1, C, 1, 1] (or [1, C]) used to broadcast per-channel vectors.
Shape channel_shape(const Shape& act) {
  Shape s(act.size(), 1);
  s[1] = act[1];
  return s;
}

ad::Var channel_expand(const ad::Var& v, const Shape& act) { return ad::expand(ad::reshape(v, channel_shape(act)), act); }

}  // namespace

ad::Var forward(const Network& net, const std::vector<ad::Var>& params, const ad::Var& batch,
                const ForwardOptions& opts) {
  const auto& spec = net.spec;
  const Shape& bs = batch.shape();
  if (bs.size() != spec.input.size() + 1 || !std::equal(spec.input.begin(), spec.input.end(), bs.begin() + 1))
    throw ShapeError("forward: batch " + shape_str(bs) + " does not match input " + shape_str(spec.input));
  if (params.size() != net.params.size()) throw std::invalid_argument("forward: parameter count mismatch");
  const std::size_t n = bs[0];
  if (opts.updated_buffers) *opts.updated_buffers = net.buffers;

  ad::Var h = batch;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::size_t po = net.param_offset[i];
    std::visit(
        overloaded{
            [&](const Dense& d) {
              h = ad::matmul(h, params[po], false, true);
              if (d.bias) h = ad::add(h, ad::expand(ad::reshape(params[po + 1], Shape{1, d.out}), Shape{n, d.out}));
            },
            [&](const Conv& c) {
              h = ad::conv2d(h, params[po], c.geom);
              if (c.bias) h = ad::add(h, channel_expand(params[po + 1], h.shape()));
            },
            [&](const ReLU&) { h = ad::relu(h); },
            [&](const BatchNorm& b) {
              const Shape act = h.shape();
              const Shape cs = channel_shape(act);
              const ad::Var& gamma = params[po];
              const ad::Var& beta = params[po + 1];
              const std::size_t bo = net.buffer_offset[i];
              if (opts.batchnorm == BatchNormMode::Inference) {
                Tensor inv_std = net.buffers[bo + 1];
                for (auto& v : inv_std.data()) v = 1.0 / std::sqrt(v + b.eps);
                const ad::Var a = ad::mul_const(gamma, inv_std);
                const ad::Var shift = ad::sub(beta, ad::mul_const(a, net.buffers[bo]));
                h = ad::add(ad::mul(h, channel_expand(a, act)), channel_expand(shift, act));
              } else {
                const double m = static_cast<double>(shape_numel(act) / act[1]);
                const ad::Var mean = ad::scale(ad::reduce_to(h, cs), 1.0 / m);
                const ad::Var centered = ad::sub(h, ad::expand(mean, act));
                const ad::Var var = ad::scale(ad::reduce_to(ad::mul(centered, centered), cs), 1.0 / m);
                const ad::Var inv = ad::pow(ad::add_const(var, Tensor(cs, b.eps)), -0.5);
                const ad::Var xhat = ad::mul(centered, ad::expand(inv, act));
                h = ad::add(ad::mul(xhat, channel_expand(gamma, act)), channel_expand(beta, act));
                if (opts.updated_buffers) {
                  auto& rm = (*opts.updated_buffers)[bo];
                  auto& rv = (*opts.updated_buffers)[bo + 1];
                  const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
                  for (std::size_t ch = 0; ch < b.channels; ++ch) {
                    rm[ch] = (1.0 - b.momentum) * rm[ch] + b.momentum * mean.value()[ch];
                    rv[ch] = (1.0 - b.momentum) * rv[ch] + b.momentum * var.value()[ch] * unbias;
                  }
                }
              }
            },
            [&](const AvgPool& p) { h = ad::avg_pool(h, p.mask); },
            [&](const MaxPool& p) { h = ad::max_pool(h, p.mask); },
            [&](const Flatten&) {
              const Shape& s = h.shape();
              h = ad::reshape(h, Shape{s[0], shape_numel(s) / s[0]});
            }},
        spec.layers[i]);
  }
  return h;
}

Tensor stack(const std::vector<const Tensor*>& samples) {
  if (samples.empty()) throw std::invalid_argument("stack: no samples");
  const Shape& s0 = samples.front()->shape();
  Shape bs{samples.size()};
  bs.insert(bs.end(), s0.begin(), s0.end());
  std::vector<double> data;
  data.reserve(shape_numel(bs));
  for (const auto* s : samples) {
    if (s->shape() != s0) throw ShapeError("stack: mixed sample shapes " + shape_str(s0) + " and " + shape_str(s->shape()));
    data.insert(data.end(), s->vec().begin(), s->vec().end());
  }
  return Tensor(std::move(bs), std::move(data));
}

Tensor stack(const std::vector<Tensor>& samples) {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return stack(ptrs);
}

Tensor unstack(const Tensor& batch, std::size_t i) {
  Shape s(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t per = shape_numel(s);
  if (i >= batch.dim(0)) throw std::out_of_range("unstack: index out of range");
  return Tensor(std::move(s), std::vector<double>(batch.vec().begin() + static_cast<std::ptrdiff_t>(i * per),
                                                  batch.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
}

Tensor logits_batch(const Network& net, const Tensor& batch) {
  ad::Tape tape;
  const auto params = bind_params(tape, net, false);
  return forward(net, params, tape.constant(batch)).value();
}

Tensor logits(const Network& net, const Tensor& x) {
  Tensor out = logits_batch(net, stack(std::vector<const Tensor*>{&x}));
  return out.reshaped(Shape{net.spec.classes});
}

Tensor input_gradients(const Network& net, const Tensor& batch, const std::vector<std::size_t>& labels,
                       std::vector<double>* losses) {
  ad::Tape tape;
  const auto params = bind_params(tape, net, false);
  const ad::Var x = tape.leaf(batch, true);
  const ad::Var z = forward(net, params, x);
  const ad::Var per = objectives::cross_entropy(z, labels);
  if (losses) losses->assign(per.value().vec().begin(), per.value().vec().end());
  return ad::grad(ad::sum(per), {x})[0];
}

Tensor input_gradient(const Network& net, const Tensor& x, std::size_t c) {
  if (c >= net.spec.classes) throw std::out_of_range("input_gradient: class index out of range");
  Tensor g = input_gradients(net, stack(std::vector<const Tensor*>{&x}), {c});
  return g.reshaped(x.shape());
}

std::vector<Tensor> logit_gradients(const Network& net, const Tensor& batch) {
  ad::Tape tape;
  const auto params = bind_params(tape, net, false);
  const ad::Var x = tape.leaf(batch, true);
  const ad::Var z = forward(net, params, x);
  const std::size_t k = net.spec.classes;
  std::vector<Tensor> out;
  out.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    Tensor sel(z.shape());
    for (std::size_t i = 0; i < sel.dim(0); ++i) sel[i * k + c] = 1.0;
    out.push_back(ad::grad(ad::sum(ad::mul_const(z, std::move(sel))), {x})[0]);
  }
  return out;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Standard architectures

namespace {

Conv conv_layer(std::size_t in, std::size_t out, ConvGeometry g, bool bias) { return Conv{g, in, out, bias}; }

void require_cwh(const Shape& input, const std::string& name) {
  if (input.size() != 3) throw std::invalid_argument(name + ": input must be [C,H,W], got " + shape_str(input));
}

bool is_pow2(std::size_t v) { return v && !(v & (v - 1)); }

}  // namespace

NetworkSpec standard_arch(const std::string& name, const Shape& input, const ArchOptions& opts) {
  NetworkSpec spec;
  spec.name = name;
  spec.input = input;
  spec.classes = opts.classes;
  auto& L = spec.layers;
  const std::size_t ch = opts.channels;

  if (name == "mlp") {
    std::size_t d = shape_numel(input);
    if (input.size() != 1) L.emplace_back(Flatten{});
    auto hidden = opts.hidden.empty() ? std::vector<std::size_t>{d, d} : opts.hidden;
    std::size_t prev = d;
    for (auto w : hidden) {
      L.emplace_back(Dense{prev, w, true});
      L.emplace_back(ReLU{});
      prev = w;
    }
    L.emplace_back(Dense{prev, opts.classes, true});
  } else if (name == "strided6") {
    require_cwh(input, name);
    const std::size_t strides[] = {1, 2, 2, 2, 2, 2};
    std::size_t c = input[0];
    for (auto s : strides) {
      L.emplace_back(conv_layer(c, ch, ConvGeometry::same(3, s), false));
      L.emplace_back(BatchNorm{ch});
      L.emplace_back(ReLU{});
      c = ch;
    }
    L.emplace_back(Flatten{});
    Shape cur = input;
    for (auto s : strides) {
      const auto g = ConvGeometry::same(3, s);
      cur = Shape{ch, g.out_h(cur[1]), g.out_w(cur[2])};
    }
    L.emplace_back(Dense{shape_numel(cur), opts.classes, true});
  } else if (name == "pool6") {
    require_cwh(input, name);
    if (input[1] % 8 || input[2] % 8) throw std::invalid_argument("pool6: spatial extents must be multiples of 8");
    if (opts.pooling != "avg" && opts.pooling != "max" && opts.pooling != "strided")
      throw std::invalid_argument("pool6: pooling must be avg, max or strided");
    std::size_t c = input[0];
    for (int b = 1; b <= 6; ++b) {
      const bool down = (b % 2 == 0);
      const std::size_t stride = (down && opts.pooling == "strided") ? 2 : 1;
      L.emplace_back(conv_layer(c, ch, ConvGeometry::same(3, stride), false));
      L.emplace_back(BatchNorm{ch});
      L.emplace_back(ReLU{});
      if (down && opts.pooling == "avg") L.emplace_back(AvgPool{{2, 2}});
      if (down && opts.pooling == "max") L.emplace_back(MaxPool{{2, 2}});
      c = ch;
    }
    L.emplace_back(AvgPool{{input[1] / 8, input[2] / 8}});
    L.emplace_back(Flatten{});
    L.emplace_back(Dense{ch, opts.classes, true});
  } else if (name == "dilated8") {
    require_cwh(input, name);
    if (input[1] % 16 || input[2] % 16) throw std::invalid_argument("dilated8: spatial extents must be multiples of 16");
    const std::size_t dil = std::max<std::size_t>(1, input[1] / 32);
    std::size_t c = input[0];
    for (int b = 1; b <= 8; ++b) {
      L.emplace_back(conv_layer(c, ch, ConvGeometry::same(3, 1, dil), false));
      L.emplace_back(BatchNorm{ch});
      L.emplace_back(ReLU{});
      if (b % 2 == 0) L.emplace_back(MaxPool{{2, 2}});
      c = ch;
    }
    L.emplace_back(MaxPool{{input[1] / 16, input[2] / 16}});
    L.emplace_back(Flatten{});
    L.emplace_back(Dense{ch, opts.classes, true});
  } else if (name == "patch") {
    require_cwh(input, name);
    if (input[1] != input[2] || !is_pow2(input[1])) throw std::invalid_argument("patch: needs square power-of-two input");
    L.emplace_back(conv_layer(input[0], ch, ConvGeometry::valid(1, 1), true));
    L.emplace_back(ReLU{});
    for (std::size_t s = input[1]; s > 1; s /= 2) {
      L.emplace_back(conv_layer(ch, ch, ConvGeometry::valid(2, 2), true));
      L.emplace_back(ReLU{});
    }
    L.emplace_back(Flatten{});
    L.emplace_back(Dense{ch, opts.classes, true});
  } else if (name == "avgpool-reduce" || name == "strided-reduce") {
    require_cwh(input, name);
    if (input[1] != input[2] || !is_pow2(input[1]) || input[1] < 2)
      throw std::invalid_argument(name + ": needs square power-of-two input of side >= 2");
    std::size_t c = input[0];
    for (std::size_t s = input[1]; s > 1; s /= 2) {
      if (name == "avgpool-reduce") {
        L.emplace_back(conv_layer(c, ch, ConvGeometry::valid(1, 1), true));
        L.emplace_back(ReLU{});
        L.emplace_back(AvgPool{{2, 2}});
      } else {
        L.emplace_back(conv_layer(c, ch, ConvGeometry::valid(2, 2), true));
        L.emplace_back(ReLU{});
      }
      c = ch;
    }
    L.emplace_back(Flatten{});
    L.emplace_back(Dense{ch, opts.classes, true});
  } else {
    throw std::invalid_argument("standard_arch: unknown architecture '" + name + "'");
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Serialization

json to_json(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& l : spec.layers) {
    json j;
    j["type"] = layer_kind(l);
    std::visit(overloaded{[&](const Dense& d) {
                            j["in"] = d.in;
                            j["out"] = d.out;
                            j["bias"] = d.bias;
                          },
                          [&](const Conv& c) {
                            j["in_ch"] = c.in_ch;
                            j["out_ch"] = c.out_ch;
                            j["kernel"] = {c.geom.kernel_h, c.geom.kernel_w};
                            j["stride"] = c.geom.stride;
                            j["dilation"] = c.geom.dilation;
                            j["padding"] = c.geom.padding == Padding::Zero ? "zero" : "none";
                            j["pad"] = {c.geom.pad_h, c.geom.pad_w};
                            j["bias"] = c.bias;
                          },
                          [&](const BatchNorm& b) {
                            j["channels"] = b.channels;
                            j["eps"] = b.eps;
                            j["momentum"] = b.momentum;
                          },
                          [&](const AvgPool& p) { j["mask"] = {p.mask.h, p.mask.w}; },
                          [&](const MaxPool& p) { j["mask"] = {p.mask.h, p.mask.w}; },
                          [](const auto&) {}},
               l);
    layers.push_back(std::move(j));
  }
  return json{{"name", spec.name}, {"input", spec.input}, {"classes", spec.classes}, {"layers", layers}};
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec spec;
  spec.name = j.value("name", std::string("custom"));
  spec.input = j.at("input").get<Shape>();
  spec.classes = j.at("classes").get<std::size_t>();
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "dense") {
      spec.layers.emplace_back(Dense{l.at("in").get<std::size_t>(), l.at("out").get<std::size_t>(), l.value("bias", true)});
    } else if (type == "conv") {
      ConvGeometry g;
      const auto k = l.at("kernel").get<std::vector<std::size_t>>();
      g.kernel_h = k.at(0);
      g.kernel_w = k.at(1);
      g.stride = l.value("stride", std::size_t{1});
      g.dilation = l.value("dilation", std::size_t{1});
      g.padding = l.value("padding", std::string("none")) == "zero" ? Padding::Zero : Padding::None;
      const auto pad = l.value("pad", std::vector<std::size_t>{0, 0});
      g.pad_h = pad.at(0);
      g.pad_w = pad.at(1);
      spec.layers.emplace_back(Conv{g, l.at("in_ch").get<std::size_t>(), l.at("out_ch").get<std::size_t>(), l.value("bias", true)});
    } else if (type == "relu") {
      spec.layers.emplace_back(ReLU{});
    } else if (type == "batchnorm") {
      spec.layers.emplace_back(BatchNorm{l.at("channels").get<std::size_t>(), l.value("eps", 1e-5), l.value("momentum", 0.1)});
    } else if (type == "avgpool" || type == "maxpool") {
      const auto m = l.at("mask").get<std::vector<std::size_t>>();
      const PoolWindow w{m.at(0), m.at(1)};
      if (type == "avgpool") spec.layers.emplace_back(AvgPool{w});
      else spec.layers.emplace_back(MaxPool{w});
    } else if (type == "flatten") {
      spec.layers.emplace_back(Flatten{});
    } else {
      throw std::invalid_argument("spec_from_json: unknown layer type '" + type + "'");
    }
  }
  spec.validate();
  return spec;
}

void save_checkpoint(const std::string& path, const Network& net, std::size_t epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const std::string header = json{{"spec", to_json(net.spec)}, {"seed", net.seed}, {"epoch", epoch}}.dump();
  const auto len = static_cast<std::uint32_t>(header.size());
  const unsigned char lb[4] = {static_cast<unsigned char>(len & 0xFF), static_cast<unsigned char>((len >> 8) & 0xFF),
                               static_cast<unsigned char>((len >> 16) & 0xFF),
                               static_cast<unsigned char>((len >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(lb), 4);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : net.params) write_tensor(os, p);
  for (const auto& b : net.buffers) write_tensor(os, b);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Network load_checkpoint(const std::string& path, std::size_t* epoch) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
  unsigned char lb[4];
  if (!is.read(reinterpret_cast<char*>(lb), 4)) throw std::runtime_error("load_checkpoint: truncated header");
  const std::uint32_t len = lb[0] | (lb[1] << 8) | (lb[2] << 16) | (static_cast<std::uint32_t>(lb[3]) << 24);
  std::string header(len, '\0');
  if (!is.read(header.data(), len)) throw std::runtime_error("load_checkpoint: truncated header");
  const json h = json::parse(header);
  Network net = allocate(spec_from_json(h.at("spec")));
  net.seed = h.at("seed").get<std::uint64_t>();
  if (epoch) *epoch = h.at("epoch").get<std::size_t>();
  for (auto& p : net.params) {
    Tensor t = read_tensor(is);
    require_same_shape(p, t, "load_checkpoint");
    p = std::move(t);
  }
  for (auto& b : net.buffers) {
    Tensor t = read_tensor(is);
    require_same_shape(b, t, "load_checkpoint");
    b = std::move(t);
  }
  return net;
}

}  // namespace advlab::nn
