#include "vid2act/nn.hpp"

#include <cmath>
#include <cstring>

#include "vid2act/errors.hpp"

namespace vid2act::nn {

namespace {

Matrix glorot(Index fan_in, Index fan_out, Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

Var ParameterSet::add(const std::string& name, Matrix init) {
  for (const auto& [n, _] : params_) {
    if (n == name) throw ConfigError("duplicate parameter name '" + name + "' in " + name_);
  }
  Var v(std::move(init), trainable_);
  params_.emplace_back(name, v);
  return v;
}

Index ParameterSet::count() const {
  Index n = 0;
  for (const auto& [_, v] : params_) n += v.value().size();
  return n;
}

void ParameterSet::set_trainable(bool on) {
  if (locked_ && on) throw ContractError("parameter set '" + name_ + "' is frozen");
  trainable_ = on;
  for (auto& [_, v] : params_) {
    v.set_requires_grad(on);
    if (!on) v.zero_grad();
  }
}

void ParameterSet::lock() {
  set_trainable(false);
  locked_ = true;
}

void ParameterSet::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& [_, v] : params_) {
    if (v.has_grad()) s += v.node()->grad.squaredNorm();
  }
  return std::sqrt(s);
}

std::uint64_t ParameterSet::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, v] : params_) {
    h = fnv1a(name, h);
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.value().data());
    const std::size_t n = static_cast<std::size_t>(v.value().size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.params_.size() != params_.size()) throw ConfigError("copy_values_from: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& src = other.params_[i].second.value();
    Var& dst = params_[i].second;
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw ConfigError("copy_values_from: shape mismatch at '" + params_[i].first + "'");
    }
    dst.mutable_value() = src;
  }
}

void ParameterSet::save(Archive& ar, const std::string& prefix) const {
  for (const auto& [name, v] : params_) ar.put_matrix(prefix + name, v.value());
}

void ParameterSet::load(const Archive& ar, const std::string& prefix) {
  for (auto& [name, v] : params_) {
    Matrix m = ar.get_matrix(prefix + name);
    if (m.rows() != v.rows() || m.cols() != v.cols()) {
      throw ConfigError("checkpoint tensor '" + prefix + name + "' has shape " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", model expects " + std::to_string(v.rows()) + "x" +
                        std::to_string(v.cols()));
    }
    v.mutable_value() = std::move(m);
  }
}

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::Elu: return ad::elu(x);
    case Activation::Tanh: return ad::tanh(x);
    case Activation::Relu: return ad::relu(x);
    case Activation::None: break;
  }
  return x;
}

Linear::Linear(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng) {
  weight_ = ps.add(name + ".weight", glorot(in, out, in, out, rng));
  bias_ = ps.add(name + ".bias", Matrix::Zero(1, out));
}

Mlp::Mlp(ParameterSet& ps, const std::string& name, Index in, const std::vector<Index>& hidden, Index out, Rng& rng,
         Activation hidden_act)
    : act_(hidden_act) {
  Index prev = in;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    layers_.emplace_back(ps, name + ".l" + std::to_string(i), prev, hidden[i], rng);
    prev = hidden[i];
  }
  layers_.emplace_back(ps, name + ".out", prev, out, rng);
}

Var Mlp::penultimate(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = activate(layers_[i](h), act_);
  return h;
}

Var Mlp::operator()(const Var& x) const { return head(penultimate(x)); }

GruCell::GruCell(ParameterSet& ps, const std::string& name, Index in, Index hidden, Rng& rng)
    : gates_(ps, name + ".gates", in + hidden, 2 * hidden, rng),
      candidate_(ps, name + ".candidate", in + hidden, hidden, rng),
      hidden_(hidden) {}

Var GruCell::operator()(const Var& x, const Var& h) const {
  Var g = ad::sigmoid(gates_(ad::concat_cols({x, h})));
  Var reset = ad::slice_cols(g, 0, hidden_);
  Var update = ad::slice_cols(g, hidden_, hidden_);
  Var cand = ad::tanh(candidate_(ad::concat_cols({x, reset * h})));
  // h' = u * c + (1 - u) * h
  return h + update * (cand - h);
}

ConvEncoder::ConvEncoder(ParameterSet& ps, const std::string& name, const ad::ImageShape& in,
                         const ConvStackConfig& cfg, Index embed_dim, Rng& rng)
    : in_(in), spec_(cfg.spec) {
  ad::ImageShape shape = in;
  const Index kk = cfg.spec.kernel * cfg.spec.kernel;
  for (Index i = 0; i < cfg.layers; ++i) {
    const Index out_c = cfg.depth << i;
    shapes_.push_back(shape);
    const std::string n = name + ".conv" + std::to_string(i);
    Var w = ps.add(n + ".weight", glorot(shape.channels * kk, out_c * kk, out_c, shape.channels * kk, rng));
    Var b = ps.add(n + ".bias", Matrix::Zero(1, out_c));
    convs_.emplace_back(w, b);
    shape = ad::conv_output_shape(shape, out_c, cfg.spec);
  }
  shapes_.push_back(shape);
  out_ = Linear(ps, name + ".out", shape.size(), embed_dim, rng);
}

Var ConvEncoder::operator()(const Var& images) const {
  Var h = images;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = ad::elu(ad::conv2d(h, shapes_[i], convs_[i].first, convs_[i].second, spec_));
  }
  return out_(h);
}

ConvDecoder::ConvDecoder(ParameterSet& ps, const std::string& name, Index in_dim, const ad::ImageShape& out,
                         const ConvStackConfig& cfg, Rng& rng)
    : spec_(cfg.spec) {
  // Walk backwards from the output resolution to find the seed feature map.
  std::vector<ad::ImageShape> rev{out};
  ad::ImageShape s = out;
  for (Index i = 0; i < cfg.layers; ++i) {
    ad::ImageShape prev;
    prev.channels = cfg.depth << (cfg.layers - 1 - i);
    prev.height = (s.height + 2 * cfg.spec.padding - cfg.spec.kernel) / cfg.spec.stride + 1;
    prev.width = (s.width + 2 * cfg.spec.padding - cfg.spec.kernel) / cfg.spec.stride + 1;
    if (ad::conv_transpose_output_shape(prev, s.channels, cfg.spec).height != s.height ||
        ad::conv_transpose_output_shape(prev, s.channels, cfg.spec).width != s.width) {
      throw ConfigError("decoder: image size not reachable with the configured conv stack");
    }
    rev.push_back(prev);
    s = prev;
  }
  shapes_.assign(rev.rbegin(), rev.rend());
  in_ = Linear(ps, name + ".in", in_dim, shapes_.front().size(), rng);
  const Index kk = cfg.spec.kernel * cfg.spec.kernel;
  for (std::size_t i = 0; i + 1 < shapes_.size(); ++i) {
    const Index ci = shapes_[i].channels;
    const Index co = shapes_[i + 1].channels;
    const std::string n = name + ".deconv" + std::to_string(i);
    Var w = ps.add(n + ".weight", glorot(ci * kk, co * kk, ci, co * kk, rng));
    Var b = ps.add(n + ".bias", Matrix::Zero(1, co));
    deconvs_.emplace_back(w, b);
  }
}

Var ConvDecoder::operator()(const Var& features) const {
  Var h = in_(features);
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    h = ad::elu(h);
    h = ad::conv_transpose2d(h, shapes_[i], deconvs_[i].first, deconvs_[i].second, shapes_[i + 1].channels, spec_);
  }
  return h;
}

Adam::Adam(ParameterSet& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
  for (const auto& [_, v] : params_.entries()) {
    m_.push_back(Matrix::Zero(v.rows(), v.cols()));
    v_.push_back(Matrix::Zero(v.rows(), v.cols()));
  }
}

double Adam::step() {
  if (params_.locked()) throw ContractError("cannot update frozen parameter set '" + params_.name() + "'");
  const double norm = params_.grad_norm();
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm in '" + params_.name() + "'");
  const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto& entries = params_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var& p = entries[i].second;
    if (!p.has_grad()) continue;
    const Matrix g = p.node()->grad * clip;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    p.mutable_value().array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
  params_.zero_grad();
  return norm;
}

}  // namespace vid2act::nn
