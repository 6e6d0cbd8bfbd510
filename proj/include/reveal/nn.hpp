#pragma once

// Transformer building blocks on top of the autograd core. Post-norm layers
// with GELU feed-forward blocks; no dropout, so train and eval forwards are
// identical.

#include <random>
#include <string>
#include <vector>

#include "reveal/autograd.hpp"

namespace reveal::nn {

using ag::Variable;

enum class ParamKind { kWeight, kBias, kNorm, kEmbedding, kScale };

struct NamedParameter {
  std::string name;
  Variable variable;
  ParamKind kind;
};

using ParameterList = std::vector<NamedParameter>;

// Normal(0, 0.02) weights, zero bias.
inline constexpr double kInitStd = 0.02;

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng);
// Rows are orthonormal when rows <= cols, columns otherwise.
Matrix orthogonal_matrix(Index rows, Index cols, std::mt19937_64& rng);
// Fixed sinusoidal encoding, [positions x width].
Matrix sinusoidal_encoding(Index positions, Index width);

struct Linear {
  Variable weight;  // [in x out]
  Variable bias;    // [1 x out]

  Linear() = default;
  Linear(Index in, Index out, std::mt19937_64& rng);
  Variable operator()(const Variable& x) const { return ag::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct LayerNorm {
  Variable gamma;
  Variable beta;

  LayerNorm() = default;
  explicit LayerNorm(Index width);
  Variable operator()(const Variable& x) const { return ag::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Index width, int heads, std::mt19937_64& rng);
  Variable operator()(const Variable& query, const Variable& memory) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct FeedForward {
  Linear up, down;

  FeedForward() = default;
  FeedForward(Index in, Index hidden, Index out, std::mt19937_64& rng);
  Variable operator()(const Variable& x) const { return down(ag::gelu(up(x))); }
  void collect(const std::string& prefix, ParameterList& out) const;
};

struct EncoderLayer {
  MultiHeadAttention self_attn;
  LayerNorm norm1, norm2;
  FeedForward ffn;

  EncoderLayer() = default;
  EncoderLayer(Index width, int heads, Index ffn_width, std::mt19937_64& rng);
  Variable operator()(const Variable& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

// Query self-attention, then cross-attention into the memory, then FFN.
struct DecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  LayerNorm norm1, norm2, norm3;
  FeedForward ffn;

  DecoderLayer() = default;
  DecoderLayer(Index width, int heads, Index ffn_width, std::mt19937_64& rng);
  Variable operator()(const Variable& queries, const Variable& memory) const;
  void collect(const std::string& prefix, ParameterList& out) const;
};

}  // namespace reveal::nn
