#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kvmt/datastore.hpp"
#include "kvmt/fusion.hpp"
#include "kvmt/linalg.hpp"

namespace kvmt {

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kFirstSymbol = 2;

struct ModelConfig {
  std::size_t d = 32;
  std::size_t d_ff = 64;
  /// Dimension of the datastore keys the projected query is compared with.
  std::size_t d_key = 32;
  std::size_t src_vocab = 42;
  std::size_t tgt_vocab = 42;
  double pos_scale = 3.0;
  double pos_base = 100.0;
  /// Encoder position j of an L-token source uses encoding L−1−j.
  bool positions_from_end = true;

  bool operator==(const ModelConfig&) const = default;
};

/// Fixed sinusoidal encoding: [scale·sin(p/base^(2i/d)), scale·cos(p/base^(2i/d))].
Vector positional_encoding(std::size_t position, const ModelConfig& config);

/// Single-layer attention encoder–decoder with tied target embeddings.
///
///   enc_j = E_src[x_j] + pos_{L−1−j}          (pos_j if !positions_from_end)
///   u_t   = W_e[y_{t−1}] + pos_t
///   c_t   = Σ_j softmax_j(u_tᵀenc_j / √d) enc_j
///   q_t   = u_t + c_t                          (retrieval query, FFN input)
///   h_t   = W_o·relu(W_f·q_t + b_f) + q_t      (translation state)
///   logits = W_e·h_t
///
/// Q_proj maps q_t into the datastore key space.
struct ToyModel {
  ModelConfig config;
  Matrix e_src;   // src_vocab × d
  Matrix w_e;     // tgt_vocab × d
  Matrix w_f;     // d_ff × d
  Vector b_f;     // d_ff
  Matrix w_o;     // d × d_ff
  FusionParams fusion;
  Matrix q_proj;  // d_key × d

  static ToyModel init(const ModelConfig& config, std::uint64_t seed);
  /// Same shapes, all zeros; used as a gradient accumulator.
  static ToyModel zeros_like(const ToyModel& model);

  struct Param {
    std::string name;
    std::vector<double>* values;
  };
  /// Every trainable group in a fixed order.
  std::vector<Param> parameters();

  bool operator==(const ToyModel&) const = default;
};

/// Encoder states, one row per source token.
Matrix encode(const ToyModel& model, const TokenSeq& source);

struct DecoderStep {
  TokenId prev = kBos;
  std::size_t position = 0;
  Vector u, attn, c, q, pre, h;
};

DecoderStep decoder_step(const ToyModel& model, const Matrix& enc, TokenId prev, std::size_t position);

/// Backpropagates ∂L/∂h and an extra ∂L/∂q (from retrieval terms) through one
/// decoder step. Parameter gradients accumulate into `grads`, encoder-state
/// gradients into `grad_enc`.
void decoder_step_backward(const ToyModel& model, const Matrix& enc, const DecoderStep& step,
                           std::span<const double> grad_h, std::span<const double> grad_q_extra,
                           ToyModel& grads, Matrix& grad_enc);

void encode_backward(const ToyModel& model, const TokenSeq& source, const Matrix& grad_enc, ToyModel& grads);

Vector project_query(const ToyModel& model, std::span<const double> q);

struct ForwardResult {
  std::vector<DecoderStep> steps;
  Matrix logits;  // |Y| × tgt_vocab, without retrieval
};

/// Teacher-forced pass over target positions t = 0..|Y|−1, feeding BOS then Y.
ForwardResult forward(const ToyModel& model, const TokenSeq& source, const TokenSeq& target);

void validate_tokens(const ToyModel& model, const TokenSeq& source, const TokenSeq& target);

/// Checkpoint: "KVCK", u32 version=1, u32 d, d_ff, d_key, src_vocab,
/// tgt_vocab, u32 flags (bit0 positions_from_end), f32 pos_scale, f32
/// pos_base, then each parameter group in parameters() order as f32.
void save_checkpoint(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_checkpoint(const std::filesystem::path& path);
std::vector<unsigned char> encode_checkpoint(const ToyModel& model);
ToyModel decode_checkpoint(std::vector<unsigned char> bytes);

}  // namespace kvmt
