#include "nctrl/vae.hpp"

#include <string>

#include "nctrl/error.hpp"

namespace nctrl {

namespace {

MlpParams assemble(const ParamStore& store, const std::string& prefix,
                   const MlpSpec& spec) {
  MlpParams p;
  p.slope = spec.slope;
  const std::size_t layers = spec.layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    p.w.push_back(store.get(prefix + ".w" + std::to_string(l)));
    p.b.push_back(store.get(prefix + ".b" + std::to_string(l)));
    p.act.push_back(l + 1 < layers ? spec.hidden : spec.out_act);
  }
  return p;
}

}  // namespace

void init_vae(ParamStore& store, const VaeSpec& spec, Rng& rng) {
  init_mlp(store, "vae.enc", spec.encoder_spec(), rng);
  init_mlp(store, "vae.dec", spec.decoder_spec(), rng);
}

EncodeNodes encode_node(Tape& t, const Bound& bound, const VaeSpec& spec,
                        NodeId x) {
  if (t.val(x).cols() != spec.m)
    throw ShapeError("encode: expected " + std::to_string(spec.m) +
                     " observation columns, got " +
                     std::to_string(t.val(x).cols()));
  const NodeId out = mlp_forward(t, bound, "vae.enc", spec.encoder_spec(), x);
  EncodeNodes nodes;
  nodes.mean = t.slice_cols(out, 0, spec.n);
  nodes.log_var =
      t.clamp(t.slice_cols(out, spec.n, 2 * spec.n), spec.logvar_lo,
              spec.logvar_hi);
  return nodes;
}

NodeId reparameterize_node(Tape& t, NodeId mean, NodeId log_var,
                           const Tensor& u) {
  if (!t.val(mean).same_shape(t.val(log_var)) ||
      !t.val(mean).same_shape(u))
    throw ShapeError("reparameterize: mean/log_var/noise shapes differ");
  const NodeId std_dev = t.exp(t.scale_add(log_var, 0.5, 0.0));
  return t.add(mean, t.mul(std_dev, t.constant(u)));
}

NodeId decode_node(Tape& t, const Bound& bound, const VaeSpec& spec,
                   NodeId z) {
  if (t.val(z).cols() != spec.n)
    throw ShapeError("decode: expected " + std::to_string(spec.n) +
                     " latent columns, got " + std::to_string(t.val(z).cols()));
  return mlp_forward(t, bound, "vae.dec", spec.decoder_spec(), z);
}

NodeId recon_loss_node(Tape& t, NodeId x_hat, NodeId x) {
  if (!t.val(x_hat).same_shape(t.val(x)))
    throw ShapeError("reconstruction loss: shapes differ");
  return t.mean(t.square(t.sub(x_hat, x)));
}

NodeId posterior_log_density_rows(Tape& t, NodeId z, NodeId mean,
                                  NodeId log_var) {
  return gaussian_log_density_rows(t, z, mean, log_var);
}

void vae_encode_plain(const ParamStore& store, const VaeSpec& spec,
                      const Tensor& x, Tensor& mean, Tensor& log_var) {
  if (x.cols() != spec.m) throw ShapeError("encode: bad observation width");
  const Tensor out =
      mlp_apply_batch(assemble(store, "vae.enc", spec.encoder_spec()), x);
  const std::size_t rows = x.rows();
  mean = Tensor({rows, spec.n}, 0.0);
  log_var = Tensor({rows, spec.n}, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < spec.n; ++i) {
      mean.at(r, i) = out.at(r, i);
      double lv = out.at(r, spec.n + i);
      if (lv < spec.logvar_lo) lv = spec.logvar_lo;
      if (lv > spec.logvar_hi) lv = spec.logvar_hi;
      log_var.at(r, i) = lv;
    }
  }
}

Tensor vae_decode_plain(const ParamStore& store, const VaeSpec& spec,
                        const Tensor& z) {
  if (z.cols() != spec.n) throw ShapeError("decode: bad latent width");
  return mlp_apply_batch(assemble(store, "vae.dec", spec.decoder_spec()), z);
}

}  // namespace nctrl
