#pragma once

// Named parameters, per-step tape bindings, the transformer building blocks
// shared by the tokenizer and the video-language model, and AdamW.

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "svq/array.hpp"
#include "svq/autodiff.hpp"
#include "svq/rng.hpp"

namespace svq {

// Insertion-ordered name -> Array map. Order is part of the checkpoint format.
class ParamStore {
 public:
  void add(std::string name, Array value);
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;
  const Array& get(std::string_view name) const { return values_[index_of(name)]; }
  Array& get(std::string_view name) { return values_[index_of(name)]; }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Array& value(std::size_t i) const { return values_[i]; }
  Array& value(std::size_t i) { return values_[i]; }
  std::size_t total_elements() const;
  // Name of the first parameter holding a NaN or infinity, empty if none.
  std::string first_non_finite() const;

  // Copy of the parameters whose names start with one of the prefixes.
  ParamStore subset(const std::vector<std::string>& prefixes) const;

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Array> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Lazily places parameters on a tape for one forward/backward pass. Frozen
// bindings place them as constants, so no gradient is ever recorded.
class Binding {
 public:
  Binding(Tape& tape, const ParamStore& store, bool trainable = true);

  Var operator()(std::string_view name);
  Tape& tape() { return *tape_; }
  bool trainable() const { return trainable_; }

  // One entry per store parameter; zeros for parameters never bound.
  std::vector<Array> gradients() const;
  // Which store parameters took part in this graph.
  const std::vector<bool>& bound() const { return is_bound_; }

 private:
  Tape* tape_;
  const ParamStore* store_;
  bool trainable_;
  std::vector<Var> bound_;
  std::vector<bool> is_bound_;
};

// -- initialisation --
Array random_normal(Shape shape, double stddev, Rng& rng);
void init_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 double stddev = -1.0);  // negative -> 1/sqrt(in)
void init_layer_norm(ParamStore& store, const std::string& prefix, std::size_t width);
void init_transformer_block(ParamStore& store, const std::string& prefix, std::size_t width, Rng& rng);

// -- forward --
Var linear(Binding& b, const std::string& prefix, const Var& x);
Var layer_norm(Binding& b, const std::string& prefix, const Var& x);

// Pre-norm block: x + Attn(LN(x)), then + MLP(LN(.)) with a 4x GELU MLP.
Var transformer_block(Binding& b, const std::string& prefix, const Var& x, std::size_t heads,
                      const Segments& segments = {});

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay applies to rank >= 2 parameters only (weights,
// embeddings, codebook); biases and norm parameters are not decayed.
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWConfig config, const ParamStore& store);

  // Parameters with active[i] == false (absent from the graph) are left
  // untouched, moments and weight decay included.
  void step(ParamStore& store, const std::vector<Array>& grads, const std::vector<bool>* active = nullptr);
  long steps_taken() const { return t_; }
  const AdamWConfig& config() const { return config_; }

  const std::vector<Array>& first_moments() const { return m_; }
  const std::vector<Array>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::vector<Array> m_, v_;
  long t_ = 0;
};

}  // namespace svq
