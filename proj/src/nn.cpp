#include "reveal/nn.hpp"

#include <cmath>

#include <Eigen/QR>

namespace reveal::nn {

Matrix normal_matrix(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Matrix orthogonal_matrix(Index rows, Index cols, std::mt19937_64& rng) {
  const bool wide = rows < cols;
  const Index tall_rows = wide ? cols : rows;
  const Index tall_cols = wide ? rows : cols;
  Eigen::MatrixXd gauss = normal_matrix(tall_rows, tall_cols, 1.0, rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall_rows, tall_cols);
  // Sign fix makes the result uniformly distributed over orthogonal frames.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Index j = 0; j < tall_cols; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  Matrix out = wide ? Matrix(q.transpose()) : Matrix(q);
  return out;
}

Matrix sinusoidal_encoding(Index positions, Index width) {
  Matrix pe(positions, width);
  for (Index pos = 0; pos < positions; ++pos) {
    for (Index i = 0; i < width; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(width);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Linear::Linear(Index in, Index out, std::mt19937_64& rng)
    : weight(normal_matrix(in, out, kInitStd, rng), true),
      bias(Matrix::Zero(1, out), true) {}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight, ParamKind::kWeight});
  out.push_back({prefix + ".bias", bias, ParamKind::kBias});
}

LayerNorm::LayerNorm(Index width)
    : gamma(Matrix::Ones(1, width), true), beta(Matrix::Zero(1, width), true) {}

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gamma", gamma, ParamKind::kNorm});
  out.push_back({prefix + ".beta", beta, ParamKind::kNorm});
}

MultiHeadAttention::MultiHeadAttention(Index width, int heads_, std::mt19937_64& rng)
    : q_proj(width, width, rng),
      k_proj(width, width, rng),
      v_proj(width, width, rng),
      out_proj(width, width, rng),
      heads(heads_) {}

Variable MultiHeadAttention::operator()(const Variable& query, const Variable& memory) const {
  return out_proj(ag::multi_head_attention(q_proj(query), k_proj(memory), v_proj(memory), heads));
}

void MultiHeadAttention::collect(const std::string& prefix, ParameterList& out) const {
  q_proj.collect(prefix + ".q", out);
  k_proj.collect(prefix + ".k", out);
  v_proj.collect(prefix + ".v", out);
  out_proj.collect(prefix + ".out", out);
}

FeedForward::FeedForward(Index in, Index hidden, Index out, std::mt19937_64& rng)
    : up(in, hidden, rng), down(hidden, out, rng) {}

void FeedForward::collect(const std::string& prefix, ParameterList& out) const {
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

EncoderLayer::EncoderLayer(Index width, int heads, Index ffn_width, std::mt19937_64& rng)
    : self_attn(width, heads, rng),
      norm1(width),
      norm2(width),
      ffn(width, ffn_width, width, rng) {}

Variable EncoderLayer::operator()(const Variable& x) const {
  Variable h = norm1(x + self_attn(x, x));
  return norm2(h + ffn(h));
}

void EncoderLayer::collect(const std::string& prefix, ParameterList& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  norm1.collect(prefix + ".norm1", out);
  ffn.collect(prefix + ".ffn", out);
  norm2.collect(prefix + ".norm2", out);
}

DecoderLayer::DecoderLayer(Index width, int heads, Index ffn_width, std::mt19937_64& rng)
    : self_attn(width, heads, rng),
      cross_attn(width, heads, rng),
      norm1(width),
      norm2(width),
      norm3(width),
      ffn(width, ffn_width, width, rng) {}

Variable DecoderLayer::operator()(const Variable& queries, const Variable& memory) const {
  Variable h = norm1(queries + self_attn(queries, queries));
  h = norm2(h + cross_attn(h, memory));
  return norm3(h + ffn(h));
}

void DecoderLayer::collect(const std::string& prefix, ParameterList& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  norm1.collect(prefix + ".norm1", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  norm2.collect(prefix + ".norm2", out);
  ffn.collect(prefix + ".ffn", out);
  norm3.collect(prefix + ".norm3", out);
}

}  // namespace reveal::nn
