#include "svq/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace svq {

void ParamStore::add(std::string name, Array value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

bool ParamStore::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

std::size_t ParamStore::index_of(std::string_view name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::string ParamStore::first_non_finite() const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!values_[i].all_finite()) return names_[i];
  }
  return {};
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

ParamStore ParamStore::subset(const std::vector<std::string>& prefixes) const {
  ParamStore out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    for (const auto& p : prefixes) {
      if (names_[i].rfind(p, 0) == 0) {
        out.add(names_[i], values_[i]);
        break;
      }
    }
  }
  return out;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!bitwise_equal(values_[i], other.values_[i])) return false;
  }
  return true;
}

Binding::Binding(Tape& tape, const ParamStore& store, bool trainable)
    : tape_(&tape), store_(&store), trainable_(trainable), bound_(store.size()), is_bound_(store.size(), false) {}

Var Binding::operator()(std::string_view name) {
  const std::size_t i = store_->index_of(name);
  if (!is_bound_[i]) {
    bound_[i] = trainable_ ? tape_->parameter(store_->value(i)) : tape_->constant(store_->value(i));
    is_bound_[i] = true;
  }
  return bound_[i];
}

std::vector<Array> Binding::gradients() const {
  std::vector<Array> grads;
  grads.reserve(store_->size());
  for (std::size_t i = 0; i < store_->size(); ++i) {
    grads.push_back(is_bound_[i] ? tape_->grad(bound_[i]) : Array(store_->value(i).shape(), 0.0));
  }
  return grads;
}

Array random_normal(Shape shape, double stddev, Rng& rng) {
  Array a(std::move(shape));
  for (auto& v : a.data()) v = stddev * rng.normal();
  return a;
}

void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 double stddev) {
  if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
  store.add(prefix + ".w", random_normal(Shape{in, out}, stddev, rng));
  store.add(prefix + ".b", Array(Shape{out}, 0.0));
}

void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width) {
  store.add(prefix + ".gamma", Array(Shape{width}, 1.0));
  store.add(prefix + ".beta", Array(Shape{width}, 0.0));
}

void init_transformer_block(ParamStore& store, const std::string& prefix, std::size_t width, Rng& rng) {
  init_layer_norm(store, prefix + ".ln1", width);
  init_linear(store, prefix + ".q", width, width, rng);
  init_linear(store, prefix + ".k", width, width, rng);
  init_linear(store, prefix + ".v", width, width, rng);
  init_linear(store, prefix + ".o", width, width, rng, 0.5 / std::sqrt(static_cast<double>(width)));
  init_layer_norm(store, prefix + ".ln2", width);
  init_linear(store, prefix + ".fc1", width, 4 * width, rng);
  init_linear(store, prefix + ".fc2", 4 * width, width, rng, 0.5 / std::sqrt(static_cast<double>(4 * width)));
}

Var linear(Binding& b, const std::string& prefix, const Var& x) {
  return add_bias(matmul(x, b(prefix + ".w")), b(prefix + ".b"));
}

Var layer_norm(Binding& b, const std::string& prefix, const Var& x) {
  return layer_norm(x, b(prefix + ".gamma"), b(prefix + ".beta"));
}

Var transformer_block(Binding& b, const std::string& prefix, const Var& x, std::size_t heads,
                      const Segments& segments) {
  const Var h = layer_norm(b, prefix + ".ln1", x);
  const Var attn = attention(linear(b, prefix + ".q", h), linear(b, prefix + ".k", h), linear(b, prefix + ".v", h),
                             heads, segments);
  const Var x1 = add(x, linear(b, prefix + ".o", attn));
  const Var h2 = layer_norm(b, prefix + ".ln2", x1);
  return add(x1, linear(b, prefix + ".fc2", gelu(linear(b, prefix + ".fc1", h2))));
}

AdamW::AdamW(AdamWConfig config, const ParamStore& store) : config_(config) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    m_.emplace_back(store.value(i).shape(), 0.0);
    v_.emplace_back(store.value(i).shape(), 0.0);
  }
}

void AdamW::step(ParamStore& store, const std::vector<Array>& grads, const std::vector<bool>* active) {
  if (grads.size() != store.size() || m_.size() != store.size() || (active && active->size() != store.size())) {
    throw std::invalid_argument("AdamW::step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(store.size()) + " parameters");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (active && !(*active)[i]) continue;
    Array& p = store.value(i);
    const Array& g = grads[i];
    if (g.shape() != p.shape()) {
      throw ShapeError("AdamW::step: gradient " + shape_str(g.shape()) + " for parameter '" + store.name(i) +
                       "' of shape " + shape_str(p.shape()));
    }
    const double decay = p.rank() >= 2 ? config_.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g[j];
      v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      const double delta = config_.lr * (mhat / (std::sqrt(vhat) + config_.eps) + decay * p[j]);
      if (delta != 0.0) p[j] -= delta;  // keeps the sign of zero entries
    }
  }
}

}  // namespace svq
