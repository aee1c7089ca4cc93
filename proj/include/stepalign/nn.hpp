#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stepalign/rng.hpp"
#include "stepalign/tensor.hpp"

namespace stepalign {

// Parameter registry entry: stable name -> shared tensor handle. The order of
// collection is fixed by member order, so optimizer state and checkpoints
// line up across runs.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Sinusoidal positional table, base 10000: PE[t,2i] = sin(t / 10000^{2i/D}),
// PE[t,2i+1] = cos of the same argument.
Tensor sincos_pe(int T, int D);

struct Linear {
  Tensor W;  // [in x out]
  Tensor b;  // [1 x out]

  static Linear init(int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct LayerNormP {
  Tensor gain;  // [1 x D]
  Tensor bias;  // [1 x D]

  static LayerNormP init(int dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct MultiheadAttention {
  int n_heads = 0;
  Linear wq, wk, wv, wo;

  static MultiheadAttention init(int dim, int n_heads, Rng& rng);
  // Scaled dot-product over all key rows (no masking anywhere in this model).
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct FeedForward {
  Linear fc1;  // D -> 4D
  Linear fc2;  // 4D -> D

  static FeedForward init(int dim, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Dropout context threaded through the stacks; p == 0 leaves graphs untouched.
struct DropoutCtx {
  double p = 0.0;
  Rng* rng = nullptr;
};

struct EncoderLayer {
  LayerNormP ln1, ln2;
  MultiheadAttention attn;
  FeedForward ffn;

  static EncoderLayer init(int dim, int n_heads, Rng& rng);
  Tensor forward(const Tensor& x, const DropoutCtx& drop) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct DecoderLayer {
  LayerNormP ln1, ln2, ln3;
  MultiheadAttention self_attn, cross_attn;
  FeedForward ffn;

  static DecoderLayer init(int dim, int n_heads, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& memory, const DropoutCtx& drop) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm stacks with a closing LayerNorm, so residual streams stay
// unnormalized until the very end.
struct Encoder {
  std::vector<EncoderLayer> layers;
  LayerNormP final_ln;

  static Encoder init(int dim, int n_heads, int n_layers, Rng& rng);
  Tensor forward(const Tensor& x, const DropoutCtx& drop) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct Decoder {
  std::vector<DecoderLayer> layers;
  LayerNormP final_ln;

  static Decoder init(int dim, int n_heads, int n_layers, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& memory, const DropoutCtx& drop) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

}  // namespace stepalign
