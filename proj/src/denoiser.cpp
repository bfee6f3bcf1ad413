#include "tgq/denoiser.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tgq {

namespace {

std::size_t layer_in(const DenoiserArch& a, std::size_t l) { return l == 0 ? a.data_dim + a.embed_dim : a.hidden; }
std::size_t layer_out(const DenoiserArch& a, std::size_t l) { return l == a.depth ? a.data_dim : a.hidden; }

Tensor network_input(const Tensor& x_t, std::span<const int> timesteps, std::size_t embed_dim) {
  const std::size_t rows = x_t.rows(), d = x_t.cols();
  if (timesteps.size() != rows && timesteps.size() != 1) {
    throw std::invalid_argument("denoise: " + std::to_string(timesteps.size()) + " timesteps for " +
                                std::to_string(rows) + " rows");
  }
  Tensor emb = time_embedding(timesteps, embed_dim);
  Tensor in({rows, d + embed_dim});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t er = timesteps.size() == 1 ? 0 : r;
    for (std::size_t c = 0; c < d; ++c) in.at(r, c) = x_t.at(r, c);
    for (std::size_t c = 0; c < embed_dim; ++c) in.at(r, d + c) = emb.at(er, c);
  }
  return in;
}

}  // namespace

DenoiserParams DenoiserParams::init(const DenoiserArch& arch, Rng& rng) {
  DenoiserParams p;
  p.arch = arch;
  for (std::size_t l = 0; l < arch.num_linear(); ++l) {
    const std::size_t in = layer_in(arch, l), out = layer_out(arch, l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear lin{Tensor({in, out}), Tensor({out})};
    for (auto& w : lin.weight.raw()) w = (2.0 * rng.uniform() - 1.0) * bound;
    for (auto& b : lin.bias.raw()) b = (2.0 * rng.uniform() - 1.0) * bound;
    p.layers.push_back(std::move(lin));
  }
  return p;
}

DenoiserParams DenoiserParams::zeros(const DenoiserArch& arch) {
  DenoiserParams p;
  p.arch = arch;
  for (std::size_t l = 0; l < arch.num_linear(); ++l) {
    p.layers.push_back({Tensor({layer_in(arch, l), layer_out(arch, l)}), Tensor({layer_out(arch, l)})});
  }
  return p;
}

bool DenoiserParams::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.all_finite() || !l.bias.all_finite()) return false;
  }
  return true;
}

bool operator==(const DenoiserParams& a, const DenoiserParams& b) {
  if (!(a.arch == b.arch) || a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (!(a.layers[i].weight == b.layers[i].weight) || !(a.layers[i].bias == b.layers[i].bias)) return false;
  }
  return true;
}

Tensor time_embedding(std::span<const int> timesteps, std::size_t embed_dim) {
  if (embed_dim == 0 || embed_dim % 2 != 0) throw std::invalid_argument("time embedding dim must be even");
  const std::size_t half = embed_dim / 2;
  Tensor out({timesteps.size(), embed_dim});
  for (std::size_t r = 0; r < timesteps.size(); ++r) {
    const double t = timesteps[r];
    for (std::size_t i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      out.at(r, i) = std::sin(t * f);
      out.at(r, half + i) = std::cos(t * f);
    }
  }
  return out;
}

ParamVars as_vars(const DenoiserParams& params, bool requires_grad) {
  ParamVars v;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    v.weights.push_back(ag::leaf(params.layers[l].weight, requires_grad, "w" + std::to_string(l)));
    v.biases.push_back(ag::leaf(params.layers[l].bias, requires_grad, "b" + std::to_string(l)));
  }
  return v;
}

ag::Var denoise(const ParamVars& params, const DenoiserArch& arch, const Tensor& x_t, std::span<const int> timesteps,
                const QuantContext* ctx) {
  if (x_t.rank() != 2 || x_t.cols() != arch.data_dim) {
    throw std::invalid_argument("denoise: expected input of width " + std::to_string(arch.data_dim) + ", got " +
                                shape_str(x_t.shape()));
  }
  const std::size_t n_linear = arch.num_linear();
  if (params.weights.size() != n_linear || params.biases.size() != n_linear) {
    throw std::invalid_argument("denoise: parameter count does not match architecture");
  }
  if (ctx) {
    if (ctx->weights.size() != n_linear) {
      throw std::invalid_argument("denoise: quant context has " + std::to_string(ctx->weights.size()) +
                                  " weight quantizers for " + std::to_string(n_linear) + " layers");
    }
    if (!ctx->activations) throw std::invalid_argument("denoise: quant context has no activation quantizer");
  }
  std::vector<int> row_t(timesteps.begin(), timesteps.end());
  if (row_t.size() == 1) row_t.assign(x_t.rows(), timesteps[0]);

  ag::Var h = ag::constant(network_input(x_t, timesteps, arch.embed_dim));
  for (std::size_t l = 0; l < n_linear; ++l) {
    ag::Var w = params.weights[l];
    if (ctx) {
      if (l > 0) h = ctx->activations->apply(h, l, row_t);
      const QuantParams& wq = ctx->weights[l];
      if (!wq.is_identity()) {
        // Static quantizer: straight-through to the weight leaf.
        w = ag::custom(quantize(w->value, wq), {w},
                       [](const Tensor& g, const std::vector<bool>&) { return std::vector<Tensor>{g}; }, "wquant");
      }
    }
    h = ag::add_bias(ag::matmul(h, w), params.biases[l]);
    if (l + 1 < n_linear) h = ag::silu(h);
  }
  return h;
}

Tensor denoise(const DenoiserParams& params, const Tensor& x_t, std::span<const int> timesteps,
               const QuantContext* ctx) {
  return denoise(as_vars(params, false), params.arch, x_t, timesteps, ctx)->value;
}

std::vector<Tensor> hidden_inputs(const DenoiserParams& params, const Tensor& x_t, std::span<const int> timesteps) {
  const auto& arch = params.arch;
  ParamVars v = as_vars(params, false);
  std::vector<Tensor> out;
  ag::Var h = ag::constant(network_input(x_t, timesteps, arch.embed_dim));
  for (std::size_t l = 0; l < arch.num_linear(); ++l) {
    if (l > 0) out.push_back(h->value);
    h = ag::add_bias(ag::matmul(h, v.weights[l]), v.biases[l]);
    if (l + 1 < arch.num_linear()) h = ag::silu(h);
  }
  return out;
}

}  // namespace tgq
