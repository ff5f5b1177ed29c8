#include "nctrl/nn.hpp"

#include <cmath>

#include "nctrl/error.hpp"

namespace nctrl {

std::size_t ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ValueError("ParamStore: duplicate name " + name);
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  index_[name] = names_.size() - 1;
  return names_.size() - 1;
}

bool ParamStore::has(const std::string& name) const {
  return index_.count(name) != 0;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("ParamStore: unknown name " + name);
  return tensors_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValueError("ParamStore: unknown name " + name);
  return tensors_[it->second];
}

std::vector<std::string> ParamStore::with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& n : names_)
    if (n.rfind(prefix, 0) == 0) out.push_back(n);
  return out;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& v : w.values) v = rng.uniform(-limit, limit);
  return w;
}

void init_mlp(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
              Rng& rng) {
  if (spec.dims.size() < 2) throw ValueError("init_mlp: need at least one layer");
  for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
    store.add(prefix + ".w" + std::to_string(l),
              glorot_uniform(spec.dims[l], spec.dims[l + 1], rng));
    store.add(prefix + ".b" + std::to_string(l),
              Tensor({1, spec.dims[l + 1]}, 0.0));
  }
}

NodeId Bound::id(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw ValueError("Bound: parameter not bound: " + name);
  return it->second;
}

Bound bind_params(Tape& tape, const ParamStore& store, bool trainable) {
  Bound b;
  b.tape = &tape;
  for (std::size_t i = 0; i < store.size(); ++i)
    b.ids[store.name_at(i)] = tape.leaf(store.at(i), trainable);
  return b;
}

Bound bind_params(Tape& tape, const ParamStore& store, bool trainable,
                  const std::vector<std::string>& prefixes) {
  Bound b;
  b.tape = &tape;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string& n = store.name_at(i);
    for (const auto& p : prefixes) {
      if (n.rfind(p, 0) == 0) {
        b.ids[n] = tape.leaf(store.at(i), trainable);
        break;
      }
    }
  }
  return b;
}

NodeId mlp_forward(Tape& tape, const Bound& bound, const std::string& prefix,
                   const MlpSpec& spec, NodeId x) {
  NodeId h = x;
  const std::size_t layers = spec.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.add_row(tape.matmul(h, bound.id(prefix + ".w" + std::to_string(l))),
                     bound.id(prefix + ".b" + std::to_string(l)));
    const Act a = (l + 1 < layers) ? spec.hidden : spec.out_act;
    if (a == Act::kLeakyRelu) h = tape.leaky_relu(h, spec.slope);
  }
  return h;
}

std::vector<double> mlp_apply(const MlpParams& p, const double* in) {
  std::vector<double> cur(in, in + p.in_dim());
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    const Tensor& w = p.w[l];
    const Tensor& b = p.b[l];
    std::vector<double> next(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) next[j] = b.values[j];
    for (std::size_t k = 0; k < w.rows(); ++k) {
      const double ck = cur[k];
      if (ck == 0.0) continue;
      const double* wrow = w.row_ptr(k);
      for (std::size_t j = 0; j < w.cols(); ++j) next[j] += ck * wrow[j];
    }
    if (p.act[l] == Act::kLeakyRelu)
      for (double& v : next) v = v > 0.0 ? v : p.slope * v;
    cur = std::move(next);
  }
  return cur;
}

Tensor mlp_apply_batch(const MlpParams& p, const Tensor& x) {
  if (x.cols() != p.in_dim())
    throw ShapeError("mlp_apply_batch: input " + shape_str(x.shape) +
                     " vs first layer " + shape_str(p.w.front().shape));
  Tensor cur = x;
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    const Tensor& w = p.w[l];
    const Tensor& b = p.b[l];
    Tensor next({cur.rows(), w.cols()});
    for (std::size_t i = 0; i < cur.rows(); ++i) {
      double* out = next.row_ptr(i);
      for (std::size_t j = 0; j < w.cols(); ++j) out[j] = b.values[j];
      const double* crow = cur.row_ptr(i);
      for (std::size_t k = 0; k < w.rows(); ++k) {
        const double ck = crow[k];
        if (ck == 0.0) continue;
        const double* wrow = w.row_ptr(k);
        for (std::size_t j = 0; j < w.cols(); ++j) out[j] += ck * wrow[j];
      }
    }
    if (p.act[l] == Act::kLeakyRelu)
      for (double& v : next.values) v = v > 0.0 ? v : p.slope * v;
    cur = std::move(next);
  }
  return cur;
}

void mlp_params_to_store(const MlpParams& p, const std::string& prefix,
                         ParamStore& store) {
  Tensor meta({1, 2 + p.w.size()});
  meta.values[0] = static_cast<double>(p.w.size());
  meta.values[1] = p.slope;
  for (std::size_t l = 0; l < p.w.size(); ++l)
    meta.values[2 + l] = p.act[l] == Act::kLeakyRelu ? 1.0 : 0.0;
  store.add(prefix + ".meta", std::move(meta));
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    store.add(prefix + ".w" + std::to_string(l), p.w[l]);
    store.add(prefix + ".b" + std::to_string(l), p.b[l]);
  }
}

MlpParams mlp_params_from_store(const ParamStore& store,
                                const std::string& prefix) {
  const Tensor& meta = store.get(prefix + ".meta");
  MlpParams p;
  const std::size_t layers = static_cast<std::size_t>(meta.values[0]);
  p.slope = meta.values[1];
  for (std::size_t l = 0; l < layers; ++l) {
    p.w.push_back(store.get(prefix + ".w" + std::to_string(l)));
    p.b.push_back(store.get(prefix + ".b" + std::to_string(l)));
    p.act.push_back(meta.values[2 + l] != 0.0 ? Act::kLeakyRelu
                                              : Act::kIdentity);
  }
  return p;
}

}  // namespace nctrl
