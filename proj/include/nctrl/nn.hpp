#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "nctrl/rng.hpp"
#include "nctrl/tape.hpp"
#include "nctrl/tensor.hpp"

namespace nctrl {

enum class Act { kLeakyRelu, kIdentity };

// Fully-connected network: dims = {in, h1, ..., out}; `hidden` activation is
// applied after every layer except the last, which uses `out_act`.
struct MlpSpec {
  std::vector<std::size_t> dims;
  Act hidden = Act::kLeakyRelu;
  Act out_act = Act::kIdentity;
  double slope = 0.2;

  std::size_t layer_count() const { return dims.size() - 1; }
};

// Weights of one network as plain tensors (used by the data generator and
// the closed-form evaluations, where no gradients are needed).
struct MlpParams {
  std::vector<Tensor> w;  // [in x out] per layer; rows act on row-vectors
  std::vector<Tensor> b;  // [1 x out]
  std::vector<Act> act;   // activation applied after each layer
  double slope = 0.2;

  std::size_t in_dim() const { return w.front().rows(); }
  std::size_t out_dim() const { return w.back().cols(); }
};

// Ordered, named collection of parameter tensors.  Order is insertion
// order and is the canonical iteration order everywhere (optimizer,
// serialization), which keeps runs deterministic.
class ParamStore {
 public:
  std::size_t add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  const std::string& name_at(std::size_t i) const { return names_[i]; }

  // Names beginning with `prefix`, in store order.
  std::vector<std::string> with_prefix(const std::string& prefix) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases.
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Registers "<prefix>.w<l>" / "<prefix>.b<l>" tensors for the given spec.
void init_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
              Rng& rng);

// Handle tying store entries to leaves of one tape evaluation.
struct Bound {
  Tape* tape = nullptr;
  std::unordered_map<std::string, NodeId> ids;
  NodeId id(const std::string& name) const;
};

// Bind every parameter (or those selected by `prefixes`) as tape leaves.
Bound bind_params(Tape& tape, const ParamStore& store, bool trainable);
Bound bind_params(Tape& tape, const ParamStore& store, bool trainable,
                  const std::vector<std::string>& prefixes);

// Forward through the network for a [rows x in] input node.
NodeId mlp_forward(Tape& tape, const Bound& bound, const std::string& prefix,
                   const MlpSpec& spec, NodeId x);

// Plain (tape-free) evaluation, one row or a batch.
std::vector<double> mlp_apply(const MlpParams& p, const double* in);
Tensor mlp_apply_batch(const MlpParams& p, const Tensor& x);

// MlpParams <-> ParamStore round trip.  Activations and the slope are kept
// in an auxiliary "<prefix>.meta" array so checkpoints are self-describing.
void mlp_params_to_store(const MlpParams& p, const std::string& prefix,
                         ParamStore& store);
MlpParams mlp_params_from_store(const ParamStore& store,
                                const std::string& prefix);

}  // namespace nctrl
