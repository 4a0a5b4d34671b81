#include "kvmt/model.hpp"

#include <cmath>

#include "kvmt/binio.hpp"

namespace kvmt {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void fill_normal(std::vector<double>& v, double stddev, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, stddev);
  for (double& x : v) x = gauss(rng);
}

}  // namespace

Vector positional_encoding(std::size_t position, const ModelConfig& config) {
  Vector p(config.d, 0.0);
  const double pos = static_cast<double>(position);
  for (std::size_t i = 0; 2 * i < config.d; ++i) {
    const double freq = std::pow(config.pos_base, -2.0 * static_cast<double>(i) / static_cast<double>(config.d));
    p[2 * i] = config.pos_scale * std::sin(pos * freq);
    if (2 * i + 1 < config.d) p[2 * i + 1] = config.pos_scale * std::cos(pos * freq);
  }
  return p;
}

ToyModel ToyModel::init(const ModelConfig& config, std::uint64_t seed) {
  if (config.d == 0 || config.d_ff == 0 || config.d_key == 0 || config.src_vocab == 0 || config.tgt_vocab == 0)
    throw InvalidArgument("ToyModel: all dimensions must be positive");
  Rng rng(seed);
  ToyModel m;
  m.config = config;
  const double d = static_cast<double>(config.d);
  m.e_src = Matrix(config.src_vocab, config.d);
  m.w_e = Matrix(config.tgt_vocab, config.d);
  m.w_f = Matrix(config.d_ff, config.d);
  m.b_f.assign(config.d_ff, 0.0);
  m.w_o = Matrix(config.d, config.d_ff);
  m.fusion = FusionParams::zeros(config.d);
  fill_normal(m.e_src.data(), 0.1, rng);
  fill_normal(m.w_e.data(), 0.1, rng);
  fill_normal(m.w_f.data(), 1.0 / std::sqrt(d), rng);
  fill_normal(m.w_o.data(), 0.1 / std::sqrt(static_cast<double>(config.d_ff)), rng);
  if (config.d_key == config.d) {
    m.q_proj = Matrix::identity(config.d);
  } else {
    m.q_proj = Matrix(config.d_key, config.d);
    fill_normal(m.q_proj.data(), 1.0 / std::sqrt(d), rng);
  }
  return m;
}

ToyModel ToyModel::zeros_like(const ToyModel& model) {
  ToyModel z = model;
  for (auto& p : z.parameters()) std::fill(p.values->begin(), p.values->end(), 0.0);
  return z;
}

std::vector<ToyModel::Param> ToyModel::parameters() {
  return {{"E_src", &e_src.data()}, {"W_e", &w_e.data()},        {"W_f", &w_f.data()},
          {"b_f", &b_f},            {"W_o", &w_o.data()},        {"W1", &fusion.w1.data()},
          {"W2", &fusion.w2.data()}, {"b", &fusion.b},           {"Q_proj", &q_proj.data()}};
}

void validate_tokens(const ToyModel& model, const TokenSeq& source, const TokenSeq& target) {
  for (TokenId t : source)
    if (t >= model.config.src_vocab) throw InvalidArgument("source token out of vocabulary: " + std::to_string(t));
  for (TokenId t : target)
    if (t >= model.config.tgt_vocab) throw InvalidArgument("target token out of vocabulary: " + std::to_string(t));
}

Matrix encode(const ToyModel& model, const TokenSeq& source) {
  if (source.empty()) throw InvalidArgument("encode: empty source");
  validate_tokens(model, source, {});
  const std::size_t len = source.size();
  Matrix enc(len, model.config.d);
  for (std::size_t j = 0; j < len; ++j) {
    const Vector pos = positional_encoding(model.config.positions_from_end ? len - 1 - j : j, model.config);
    const auto emb = model.e_src.row(source[j]);
    auto row = enc.row(j);
    for (std::size_t i = 0; i < model.config.d; ++i) row[i] = emb[i] + pos[i];
  }
  return enc;
}

DecoderStep decoder_step(const ToyModel& model, const Matrix& enc, TokenId prev, std::size_t position) {
  if (prev >= model.config.tgt_vocab) throw InvalidArgument("decoder_step: token out of vocabulary");
  const std::size_t d = model.config.d;
  DecoderStep s;
  s.prev = prev;
  s.position = position;
  s.u = positional_encoding(position, model.config);
  const auto emb = model.w_e.row(prev);
  for (std::size_t i = 0; i < d; ++i) s.u[i] += emb[i];

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Vector scores(enc.rows());
  for (std::size_t j = 0; j < enc.rows(); ++j) scores[j] = dot(std::span<const double>(s.u), enc.row(j)) * inv_sqrt_d;
  s.attn = softmax(scores);
  s.c = matvec_transposed(enc, s.attn);
  s.q.resize(d);
  for (std::size_t i = 0; i < d; ++i) s.q[i] = s.u[i] + s.c[i];

  s.pre = matvec(model.w_f, s.q);
  Vector r(s.pre.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    s.pre[i] += model.b_f[i];
    r[i] = s.pre[i] > 0 ? s.pre[i] : 0.0;
  }
  s.h = matvec(model.w_o, r);
  for (std::size_t i = 0; i < d; ++i) s.h[i] += s.q[i];
  return s;
}

void decoder_step_backward(const ToyModel& model, const Matrix& enc, const DecoderStep& step,
                           std::span<const double> grad_h, std::span<const double> grad_q_extra,
                           ToyModel& grads, Matrix& grad_enc) {
  const std::size_t d = model.config.d;
  const std::size_t f = model.config.d_ff;

  Vector r(f);
  for (std::size_t i = 0; i < f; ++i) r[i] = step.pre[i] > 0 ? step.pre[i] : 0.0;
  add_outer(grads.w_o, grad_h, r);
  Vector gpre = matvec_transposed(model.w_o, grad_h);
  for (std::size_t i = 0; i < f; ++i) {
    if (step.pre[i] <= 0) gpre[i] = 0.0;
    grads.b_f[i] += gpre[i];
  }
  add_outer(grads.w_f, gpre, step.q);
  Vector gq = matvec_transposed(model.w_f, gpre);
  for (std::size_t i = 0; i < d; ++i) gq[i] += grad_h[i] + (grad_q_extra.empty() ? 0.0 : grad_q_extra[i]);

  // q = u + c, c = Σ_j a_j enc_j, a = softmax(u·enc / √d)
  Vector gu = gq;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const std::size_t len = enc.rows();
  Vector ga(len);
  double mean = 0;
  for (std::size_t j = 0; j < len; ++j) {
    ga[j] = dot(std::span<const double>(gq), enc.row(j));
    mean += step.attn[j] * ga[j];
  }
  for (std::size_t j = 0; j < len; ++j) {
    const double gs = step.attn[j] * (ga[j] - mean) * inv_sqrt_d;
    const auto e = enc.row(j);
    auto ge = grad_enc.row(j);
    for (std::size_t i = 0; i < d; ++i) {
      gu[i] += gs * e[i];
      ge[i] += gs * step.u[i] + step.attn[j] * gq[i];
    }
  }
  auto gw = grads.w_e.row(step.prev);
  for (std::size_t i = 0; i < d; ++i) gw[i] += gu[i];
}

void encode_backward(const ToyModel& model, const TokenSeq& source, const Matrix& grad_enc, ToyModel& grads) {
  for (std::size_t j = 0; j < source.size(); ++j) {
    auto g = grads.e_src.row(source[j]);
    const auto src = grad_enc.row(j);
    for (std::size_t i = 0; i < model.config.d; ++i) g[i] += src[i];
  }
}

Vector project_query(const ToyModel& model, std::span<const double> q) { return matvec(model.q_proj, q); }

ForwardResult forward(const ToyModel& model, const TokenSeq& source, const TokenSeq& target) {
  validate_tokens(model, source, target);
  const Matrix enc = encode(model, source);
  ForwardResult out;
  out.logits = Matrix(target.size(), model.config.tgt_vocab);
  for (std::size_t t = 0; t < target.size(); ++t) {
    out.steps.push_back(decoder_step(model, enc, t == 0 ? kBos : target[t - 1], t));
    const Vector logits = matvec(model.w_e, out.steps.back().h);
    std::copy(logits.begin(), logits.end(), out.logits.row(t).begin());
  }
  return out;
}

std::vector<unsigned char> encode_checkpoint(const ToyModel& model) {
  ByteWriter w;
  w.magic("KVCK");
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto& c = model.config;
  for (std::size_t v : {c.d, c.d_ff, c.d_key, c.src_vocab, c.tgt_vocab}) w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<std::uint32_t>(c.positions_from_end ? 1u : 0u);
  w.put<float>(static_cast<float>(c.pos_scale));
  w.put<float>(static_cast<float>(c.pos_base));
  for (auto& p : const_cast<ToyModel&>(model).parameters())
    for (double x : *p.values) w.put<float>(static_cast<float>(x));
  return w.bytes();
}

ToyModel decode_checkpoint(std::vector<unsigned char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("KVCK");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  ModelConfig c;
  c.d = r.get<std::uint32_t>();
  c.d_ff = r.get<std::uint32_t>();
  c.d_key = r.get<std::uint32_t>();
  c.src_vocab = r.get<std::uint32_t>();
  c.tgt_vocab = r.get<std::uint32_t>();
  const auto flags = r.get<std::uint32_t>();
  if (flags > 1) throw FormatError("checkpoint: unknown flags");
  c.positions_from_end = flags & 1u;
  c.pos_scale = r.get<float>();
  c.pos_base = r.get<float>();
  if (c.d == 0 || c.d_ff == 0 || c.d_key == 0 || c.src_vocab == 0 || c.tgt_vocab == 0)
    throw FormatError("checkpoint: zero dimension");
  const std::uint64_t expected = c.src_vocab * c.d + c.tgt_vocab * c.d + 2 * c.d_ff * c.d + c.d_ff +
                                 2 * c.d * c.d + c.d + c.d_key * c.d;
  if (r.remaining() != expected * sizeof(float)) throw FormatError("checkpoint: parameter block size mismatch");

  ToyModel m = ToyModel::init(c, 0);
  for (auto& p : m.parameters())
    for (double& x : *p.values) x = r.get<float>();
  r.expect_end();
  return m;
}

void save_checkpoint(const ToyModel& model, const std::filesystem::path& path) {
  save_bytes(encode_checkpoint(model), path);
}

ToyModel load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(load_bytes(path)); }

}  // namespace kvmt
