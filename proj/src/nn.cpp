#include "stepalign/nn.hpp"

#include <cmath>

#include "stepalign/util.hpp"

namespace stepalign {

namespace {

// Xavier-uniform: U(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
Tensor xavier(int in, int out, Rng& rng) {
  Tensor w = Tensor::zeros(in, out, /*requires_grad=*/true);
  double limit = std::sqrt(6.0 / (in + out));
  for (auto& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

Tensor maybe_dropout(const Tensor& x, const DropoutCtx& drop) {
  if (drop.p <= 0.0) return x;
  if (drop.rng == nullptr) throw UsageError("dropout requested without an rng");
  return dropout(x, drop.p, *drop.rng);
}

}  // namespace

Tensor sincos_pe(int T, int D) {
  if (D % 2 != 0) throw ConfigError("sincos_pe: D must be even, got " + std::to_string(D));
  if (T <= 0) throw ConfigError("sincos_pe: T must be positive");
  Tensor pe = Tensor::zeros(T, D);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < D / 2; ++i) {
      double rate = std::pow(10000.0, -2.0 * i / D);
      double arg = t * rate;
      pe.at(t, 2 * i) = std::sin(arg);
      pe.at(t, 2 * i + 1) = std::cos(arg);
    }
  }
  return pe;
}

// --- Linear -------------------------------------------------------------------

Linear Linear::init(int in, int out, Rng& rng) {
  Linear l;
  l.W = xavier(in, out, rng);
  l.b = Tensor::zeros(1, out, /*requires_grad=*/true);
  return l;
}

Tensor Linear::forward(const Tensor& x) const { return add_rowvec(matmul(x, W), b); }

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".W", W);
  out.emplace_back(prefix + ".b", b);
}

// --- LayerNormP ----------------------------------------------------------------

LayerNormP LayerNormP::init(int dim) {
  LayerNormP ln;
  ln.gain = Tensor::full(1, dim, 1.0, /*requires_grad=*/true);
  ln.bias = Tensor::zeros(1, dim, /*requires_grad=*/true);
  return ln;
}

Tensor LayerNormP::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNormP::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

// --- MultiheadAttention ----------------------------------------------------------

MultiheadAttention MultiheadAttention::init(int dim, int n_heads, Rng& rng) {
  if (n_heads <= 0 || dim % n_heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  MultiheadAttention a;
  a.n_heads = n_heads;
  a.wq = Linear::init(dim, dim, rng);
  a.wk = Linear::init(dim, dim, rng);
  a.wv = Linear::init(dim, dim, rng);
  a.wo = Linear::init(dim, dim, rng);
  return a;
}

Tensor MultiheadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
  Tensor Q = wq.forward(q);
  Tensor K = wk.forward(k);
  Tensor V = wv.forward(v);
  int dim = Q.cols();
  int dh = dim / n_heads;
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = col_slice(Q, h * dh, dh);
    Tensor kh = col_slice(K, h * dh, dh);
    Tensor vh = col_slice(V, h * dh, dh);
    Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), /*axis=*/1);
    heads.push_back(matmul(weights, vh));
  }
  return wo.forward(hcat(heads));
}

void MultiheadAttention::collect(const std::string& prefix, ParamList& out) const {
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
}

// --- FeedForward -----------------------------------------------------------------

FeedForward FeedForward::init(int dim, Rng& rng) {
  FeedForward f;
  f.fc1 = Linear::init(dim, 4 * dim, rng);
  f.fc2 = Linear::init(4 * dim, dim, rng);
  return f;
}

Tensor FeedForward::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// --- EncoderLayer ----------------------------------------------------------------

EncoderLayer EncoderLayer::init(int dim, int n_heads, Rng& rng) {
  EncoderLayer l;
  l.ln1 = LayerNormP::init(dim);
  l.ln2 = LayerNormP::init(dim);
  l.attn = MultiheadAttention::init(dim, n_heads, rng);
  l.ffn = FeedForward::init(dim, rng);
  return l;
}

Tensor EncoderLayer::forward(const Tensor& x, const DropoutCtx& drop) const {
  Tensor a = ln1.forward(x);
  Tensor h = add(x, maybe_dropout(attn.forward(a, a, a), drop));
  return add(h, maybe_dropout(ffn.forward(ln2.forward(h)), drop));
}

void EncoderLayer::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  attn.collect(prefix + ".attn", out);
  ffn.collect(prefix + ".ffn", out);
}

// --- DecoderLayer ----------------------------------------------------------------

DecoderLayer DecoderLayer::init(int dim, int n_heads, Rng& rng) {
  DecoderLayer l;
  l.ln1 = LayerNormP::init(dim);
  l.ln2 = LayerNormP::init(dim);
  l.ln3 = LayerNormP::init(dim);
  l.self_attn = MultiheadAttention::init(dim, n_heads, rng);
  l.cross_attn = MultiheadAttention::init(dim, n_heads, rng);
  l.ffn = FeedForward::init(dim, rng);
  return l;
}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& memory,
                             const DropoutCtx& drop) const {
  Tensor a = ln1.forward(x);
  Tensor h = add(x, maybe_dropout(self_attn.forward(a, a, a), drop));
  Tensor c = ln2.forward(h);
  h = add(h, maybe_dropout(cross_attn.forward(c, memory, memory), drop));
  return add(h, maybe_dropout(ffn.forward(ln3.forward(h)), drop));
}

void DecoderLayer::collect(const std::string& prefix, ParamList& out) const {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  ln3.collect(prefix + ".ln3", out);
  self_attn.collect(prefix + ".self_attn", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  ffn.collect(prefix + ".ffn", out);
}

// --- stacks ------------------------------------------------------------------------

Encoder Encoder::init(int dim, int n_heads, int n_layers, Rng& rng) {
  if (n_layers <= 0) throw ConfigError("encoder: n_layers must be positive");
  Encoder e;
  for (int i = 0; i < n_layers; ++i) e.layers.push_back(EncoderLayer::init(dim, n_heads, rng));
  e.final_ln = LayerNormP::init(dim);
  return e;
}

Tensor Encoder::forward(const Tensor& x, const DropoutCtx& drop) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer.forward(h, drop);
  return final_ln.forward(h);
}

void Encoder::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  final_ln.collect(prefix + ".final_ln", out);
}

Decoder Decoder::init(int dim, int n_heads, int n_layers, Rng& rng) {
  if (n_layers <= 0) throw ConfigError("decoder: n_layers must be positive");
  Decoder d;
  for (int i = 0; i < n_layers; ++i) d.layers.push_back(DecoderLayer::init(dim, n_heads, rng));
  d.final_ln = LayerNormP::init(dim);
  return d;
}

Tensor Decoder::forward(const Tensor& x, const Tensor& memory, const DropoutCtx& drop) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer.forward(h, memory, drop);
  return final_ln.forward(h);
}

void Decoder::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].collect(prefix + ".layer" + std::to_string(i), out);
  final_ln.collect(prefix + ".final_ln", out);
}

}  // namespace stepalign
