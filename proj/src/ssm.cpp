#include "pmtk/ssm.hpp"

#include <algorithm>
#include <cmath>

#include "pmtk/kernels.hpp"

namespace pmtk::ssm {

std::size_t PatchEmbedConfig::token_count(std::size_t h, std::size_t w) const {
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("input " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch size " +
                         std::to_string(patch));
  }
  return (h / patch) * (w / patch);
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& x, std::size_t p) {
  if (x.rank() != 4) throw DimensionError("patchify expects [N,C,H,W], got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (p == 0 || h % p != 0 || w % p != 0) throw DimensionError("patchify: extents not divisible by patch size");
  const std::size_t gh = h / p, gw = w / p, m = gh * gw, pd = p * p * c;
  Tensor<T> out({n * m, pd});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        T* row = out.ptr() + (b * m + gy * gw + gx) * pd;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) row[(ci * p + dy) * p + dx] = x(b, ci, gy * p + dy, gx * p + dx);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, const Shape& x_shape, std::size_t p) {
  const std::size_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3];
  const std::size_t gh = h / p, gw = w / p, m = gh * gw, pd = p * p * c;
  if (patches.shape() != Shape{n * m, pd}) throw DimensionError("unpatchify: patch matrix shape mismatch");
  Tensor<T> x(x_shape);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const T* row = patches.ptr() + (b * m + gy * gw + gx) * pd;
        for (std::size_t ci = 0; ci < c; ++ci) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) x(b, ci, gy * p + dy, gx * p + dx) = row[(ci * p + dy) * p + dx];
          }
        }
      }
    }
  }
  return x;
}

template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t batch, std::size_t grid_h, std::size_t grid_w) {
  const std::size_t m = grid_h * grid_w;
  if (tokens.rank() != 2 || tokens.dim(0) != batch * m) {
    throw DimensionError("tokens_to_map: " + shape_str(tokens.shape()) + " does not hold " + std::to_string(batch) +
                         " grids of " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  const std::size_t d = tokens.dim(1);
  Tensor<T> map({batch, d, grid_h, grid_w});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* row = tokens.ptr() + (b * m + i) * d;
      for (std::size_t k = 0; k < d; ++k) map[(b * d + k) * m + i] = row[k];
    }
  }
  return map;
}

template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& map) {
  if (map.rank() != 4) throw DimensionError("map_to_tokens expects [N,D,H,W]");
  const std::size_t batch = map.dim(0), d = map.dim(1), m = map.dim(2) * map.dim(3);
  Tensor<T> tokens({batch * m, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* row = tokens.ptr() + (b * m + i) * d;
      for (std::size_t k = 0; k < d; ++k) row[k] = map[(b * d + k) * m + i];
    }
  }
  return tokens;
}

template <typename T>
Var<T> tokens_to_map(Var<T> tokens, std::size_t batch, std::size_t grid_h, std::size_t grid_w) {
  return tokens.tape()->record("tokens_to_map", tokens_to_map(tokens.value(), batch, grid_h, grid_w), {tokens},
                               [tokens](Tape<T>& t, const Tensor<T>& g) { t.accumulate(tokens, map_to_tokens(g)); });
}

namespace {

template <typename T>
Var<T> patchify_op(Var<T> x, std::size_t p) {
  return x.tape()->record("patchify", patchify(x.value(), p), {x}, [x, p](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, unpatchify(g, x.shape(), p));
  });
}

// x [N*M, D] + pos [M, D] repeated over the batch.
template <typename T>
Var<T> add_position(Var<T> x, Var<T> pos) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& pv = pos.value();
  if (pv.rank() != 2 || xv.rank() != 2 || pv.dim(1) != xv.dim(1) || pv.dim(0) == 0 || xv.dim(0) % pv.dim(0) != 0) {
    throw DimensionError("position embedding " + shape_str(pv.shape()) + " incompatible with tokens " +
                         shape_str(xv.shape()));
  }
  const std::size_t block = pv.size();
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += pv[i % block];
  return x.tape()->record("add_position", std::move(out), {x, pos}, [x, pos, block](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x, g);
    if (!t.requires_grad(pos)) return;
    Tensor<T> gp(pos.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gp[i % block] += g[i];
    t.accumulate(pos, gp);
  });
}

}  // namespace

template <typename T>
Var<T> patch_embed(Var<T> x, const PatchEmbedConfig& cfg, Var<T> w_proj, Var<T> pos) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw DimensionError("patch_embed expects [N,C,H,W]");
  if (s[1] != cfg.in_channels) throw DimensionError("patch_embed channel mismatch");
  const std::size_t m = cfg.token_count(s[2], s[3]);
  if (w_proj.shape() != Shape{cfg.patch_dim(), cfg.embed_dim}) {
    throw DimensionError("patch projection must be " + shape_str({cfg.patch_dim(), cfg.embed_dim}));
  }
  if (pos.shape() != Shape{m, cfg.embed_dim}) {
    throw DimensionError("position embedding must be " + shape_str({m, cfg.embed_dim}));
  }
  return add_position(matmul(patchify_op(x, cfg.patch), w_proj), pos);
}

namespace {

struct ScanDims {
  std::size_t batch, len, channels, state;
};

template <typename T>
ScanDims scan_dims(const ScanInputs<T>& in) {
  if (in.x.rank() != 2 || in.batch == 0 || in.x.dim(0) % in.batch != 0) {
    throw DimensionError("scan input must be [N*L, E] with N = batch");
  }
  ScanDims d{in.batch, in.x.dim(0) / in.batch, in.x.dim(1), in.a.rank() == 2 ? in.a.dim(1) : 0};
  if (d.len == 0) throw DimensionError("scan needs L >= 1");
  if (in.delta.shape() != in.x.shape()) throw DimensionError("delta must match x " + shape_str(in.x.shape()));
  if (in.a.shape() != Shape{d.channels, d.state}) throw DimensionError("A must be [E,S]");
  if (in.b.shape() != Shape{in.x.dim(0), d.state} || in.c.shape() != in.b.shape()) {
    throw DimensionError("B and C must be [N*L, S]");
  }
  if (in.d_skip.size() != d.channels) throw DimensionError("skip coefficient must be [E]");
  return d;
}

}  // namespace

template <typename T>
Tensor<T> selective_scan_reference(const ScanInputs<T>& in) {
  const ScanDims dm = scan_dims(in);
  Tensor<T> y(in.x.shape());
  std::vector<double> h(dm.state);
  for (std::size_t n = 0; n < dm.batch; ++n) {
    for (std::size_t e = 0; e < dm.channels; ++e) {
      std::fill(h.begin(), h.end(), 0.0);
      for (std::size_t k = 0; k < dm.len; ++k) {
        const std::size_t t = in.reverse ? dm.len - 1 - k : k;
        const std::size_t row = n * dm.len + t;
        const double dt = in.delta(row, e);
        const double xt = in.x(row, e);
        double acc = 0.0;
        for (std::size_t s = 0; s < dm.state; ++s) {
          h[s] = std::exp(dt * in.a(e, s)) * h[s] + dt * in.b(row, s) * xt;
          acc += in.c(row, s) * h[s];
        }
        y(row, e) = static_cast<T>(acc + in.d_skip[e] * xt);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> selective_scan_chunked(const ScanInputs<T>& in, std::size_t chunk, Tensor<T>* states) {
  const ScanDims dm = scan_dims(in);
  if (chunk == 0) throw ConfigError("scan chunk length must be positive");
  chunk = std::min(chunk, dm.len);
  Tensor<T> y(in.x.shape());
  if (states != nullptr) *states = Tensor<T>({in.x.dim(0), dm.channels, dm.state});
  std::vector<double> local(chunk * dm.state), decay(chunk * dm.state), carry(dm.state), h(dm.state), p(dm.state);
  std::vector<double> a_row(dm.state);
  for (std::size_t n = 0; n < dm.batch; ++n) {
    for (std::size_t e = 0; e < dm.channels; ++e) {
      for (std::size_t s = 0; s < dm.state; ++s) a_row[s] = in.a(e, s);
      std::fill(carry.begin(), carry.end(), 0.0);
      for (std::size_t k0 = 0; k0 < dm.len; k0 += chunk) {
        const std::size_t kn = std::min(chunk, dm.len - k0);
        // pass 1: zero-state scan of the chunk and running decay products
        std::fill(h.begin(), h.end(), 0.0);
        std::fill(p.begin(), p.end(), 1.0);
        for (std::size_t j = 0; j < kn; ++j) {
          const std::size_t k = k0 + j;
          const std::size_t row = n * dm.len + (in.reverse ? dm.len - 1 - k : k);
          const double dt = in.delta(row, e);
          const double bx = dt * in.x(row, e);
          for (std::size_t s = 0; s < dm.state; ++s) {
            const double a = std::exp(dt * a_row[s]);
            h[s] = a * h[s] + bx * in.b(row, s);
            p[s] *= a;
            local[j * dm.state + s] = h[s];
            decay[j * dm.state + s] = p[s];
          }
        }
        // pass 2: fold in the state carried from earlier chunks
        for (std::size_t j = 0; j < kn; ++j) {
          const std::size_t k = k0 + j;
          const std::size_t row = n * dm.len + (in.reverse ? dm.len - 1 - k : k);
          double acc = 0.0;
          for (std::size_t s = 0; s < dm.state; ++s) {
            const double hs = local[j * dm.state + s] + decay[j * dm.state + s] * carry[s];
            acc += in.c(row, s) * hs;
            if (states != nullptr) (*states)[(row * dm.channels + e) * dm.state + s] = static_cast<T>(hs);
            if (j + 1 == kn) h[s] = hs;
          }
          y(row, e) = static_cast<T>(acc + in.d_skip[e] * in.x(row, e));
        }
        std::copy(h.begin(), h.end(), carry.begin());
      }
    }
  }
  return y;
}

template <typename T>
Var<T> selective_scan(Var<T> x, Var<T> delta, Var<T> a, Var<T> b, Var<T> c, Var<T> d_skip, std::size_t batch,
                      bool reverse) {
  auto states = std::make_shared<Tensor<T>>();
  const ScanInputs<T> in{x.value(), delta.value(), a.value(), b.value(), c.value(), d_skip.value(), batch, reverse};
  Tape<T>* tape = x.tape();
  Tensor<T> y = selective_scan_chunked(in, 64, tape->grad_enabled() ? states.get() : nullptr);
  return tape->record(
      "selective_scan", std::move(y), {x, delta, a, b, c, d_skip},
      [=](Tape<T>& t, const Tensor<T>& g) {
        const ScanInputs<T> si{x.value(), delta.value(), a.value(), b.value(), c.value(), d_skip.value(), batch,
                               reverse};
        const ScanDims dm = scan_dims(si);
        const std::size_t rows = si.x.dim(0);
        std::vector<double> gx(rows * dm.channels, 0.0), gdelta(rows * dm.channels, 0.0);
        std::vector<double> ga(dm.channels * dm.state, 0.0), gd(dm.channels, 0.0);
        std::vector<double> gb(rows * dm.state, 0.0), gc(rows * dm.state, 0.0);
        std::vector<double> dh(dm.state);
        const Tensor<T>& hs = *states;
        for (std::size_t n = 0; n < dm.batch; ++n) {
          for (std::size_t e = 0; e < dm.channels; ++e) {
            std::fill(dh.begin(), dh.end(), 0.0);
            for (std::size_t k = dm.len; k-- > 0;) {
              const std::size_t row = n * dm.len + (reverse ? dm.len - 1 - k : k);
              const bool has_prev = k > 0;
              const std::size_t prev = n * dm.len + (reverse ? dm.len - k : k - 1);
              const double gy = g(row, e);
              const double dt = si.delta(row, e);
              const double xt = si.x(row, e);
              double gdt = 0.0, gxt = si.d_skip[e] * gy;
              gd[e] += gy * xt;
              for (std::size_t s = 0; s < dm.state; ++s) {
                const double h_t = hs[(row * dm.channels + e) * dm.state + s];
                const double h_prev = has_prev ? static_cast<double>(hs[(prev * dm.channels + e) * dm.state + s]) : 0.0;
                gc[row * dm.state + s] += gy * h_t;
                dh[s] += gy * si.c(row, s);
                const double av = si.a(e, s);
                const double decay = std::exp(dt * av);
                const double g_decay = dh[s] * h_prev;
                const double bt = si.b(row, s);
                gdt += g_decay * decay * av + dh[s] * bt * xt;
                ga[e * dm.state + s] += g_decay * decay * dt;
                gb[row * dm.state + s] += dh[s] * dt * xt;
                gxt += dh[s] * dt * bt;
                dh[s] *= decay;
              }
              gx[row * dm.channels + e] += gxt;
              gdelta[row * dm.channels + e] += gdt;
            }
          }
        }
        auto to_tensor = [](const Shape& shape, const std::vector<double>& v) {
          return Tensor<T>(shape, std::vector<T>(v.begin(), v.end()));
        };
        t.accumulate(x, to_tensor(x.shape(), gx));
        t.accumulate(delta, to_tensor(delta.shape(), gdelta));
        t.accumulate(a, to_tensor(a.shape(), ga));
        t.accumulate(b, to_tensor(b.shape(), gb));
        t.accumulate(c, to_tensor(c.shape(), gc));
        t.accumulate(d_skip, to_tensor(d_skip.shape(), gd));
      });
}

template <typename T>
Var<T> causal_conv1d(Var<T> x, Var<T> w, Var<T> bias, std::size_t batch) {
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2 || batch == 0 || xv.dim(0) % batch != 0) throw DimensionError("causal_conv1d expects [N*L, E]");
  const std::size_t len = xv.dim(0) / batch, ch = xv.dim(1);
  if (w.shape() != Shape{ch, 3} || bias.value().size() != ch) {
    throw DimensionError("causal_conv1d weights must be [E,3] and [E]");
  }
  const Tensor<T>& wv = w.value();
  Tensor<T> y(xv.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t row = n * len + t;
      for (std::size_t e = 0; e < ch; ++e) {
        double acc = bias.value()[e];
        for (std::size_t j = 0; j < 3; ++j) {
          if (t + j >= 2) acc += wv(e, j) * xv(row + j - 2, e);
        }
        y(row, e) = static_cast<T>(acc);
      }
    }
  }
  return x.tape()->record("causal_conv1d", std::move(y), {x, w, bias},
                          [x, w, bias, batch, len, ch](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& xv = x.value();
                            const Tensor<T>& wv = w.value();
                            Tensor<T> gx(xv.shape()), gw(wv.shape()), gbias(bias.shape());
                            for (std::size_t n = 0; n < batch; ++n) {
                              for (std::size_t tt = 0; tt < len; ++tt) {
                                const std::size_t row = n * len + tt;
                                for (std::size_t e = 0; e < ch; ++e) {
                                  const T gy = g(row, e);
                                  gbias[e] += gy;
                                  for (std::size_t j = 0; j < 3; ++j) {
                                    if (tt + j < 2) continue;
                                    gx(row + j - 2, e) += wv(e, j) * gy;
                                    gw(e, j) += xv(row + j - 2, e) * gy;
                                  }
                                }
                              }
                            }
                            t.accumulate(x, gx);
                            t.accumulate(w, gw);
                            t.accumulate(bias, gbias);
                          });
}

namespace {

template <typename T>
Var<T> scan_direction(Var<T> xc, const SsmParams<T>& p, std::size_t batch, bool reverse) {
  const std::size_t rank = p.dt_proj.shape()[0];
  const std::size_t state = p.a_log.shape()[1];
  if (p.x_proj.shape()[1] != rank + 2 * state) throw DimensionError("x_proj width must be R + 2S");
  Var<T> proj = matmul(xc, p.x_proj);
  Var<T> dt_in = slice_cols(proj, 0, rank);
  Var<T> b = slice_cols(proj, rank, state);
  Var<T> c = slice_cols(proj, rank + state, state);
  Var<T> delta = softplus(bias_add(matmul(dt_in, p.dt_proj), p.dt_bias));
  Var<T> a = scale(exp(p.a_log), -1.0);
  return selective_scan(xc, delta, a, b, c, p.d_skip, batch, reverse);
}

}  // namespace

template <typename T>
Var<T> bidirectional_scan(Var<T> xc, const SsmParams<T>& fwd, const SsmParams<T>& bwd, std::size_t batch) {
  return add(scan_direction(xc, fwd, batch, false), scan_direction(xc, bwd, batch, true));
}

template <typename T>
Var<T> vim_block(Var<T> tokens, const VimBlockWeights<T>& w, std::size_t batch) {
  const Shape& s = tokens.shape();
  if (s.size() != 2) throw DimensionError("vim_block expects [N*M, D]");
  const std::size_t d = s[1];
  if (w.in_proj.shape()[0] != d || w.out_proj.shape()[1] != d || w.in_proj.shape()[1] != 2 * w.out_proj.shape()[0]) {
    throw DimensionError("vim_block weights do not match token dimension " + std::to_string(d));
  }
  const std::size_t inner = w.out_proj.shape()[0];
  Var<T> h = norm_affine(tokens, w.norm_gamma, w.norm_beta);
  Var<T> xz = matmul(h, w.in_proj);
  Var<T> xs = slice_cols(xz, 0, inner);
  Var<T> z = slice_cols(xz, inner, inner);
  Var<T> xc = silu(causal_conv1d(xs, w.conv_w, w.conv_b, batch));
  Var<T> y = mul(bidirectional_scan(xc, w.fwd, w.bwd, batch), silu(z));
  return add(matmul(y, w.out_proj), tokens);
}

template <typename T>
Tensor<T> attention_reference(const Tensor<T>& x) {
  if (x.rank() != 2) throw DimensionError("attention_reference expects [L, D]");
  const std::size_t len = x.dim(0);
  Tensor<T> scores = kernels::matmul_a_bt(x, x);
  const double inv = 1.0 / std::sqrt(static_cast<double>(x.dim(1)));
  for (std::size_t i = 0; i < len; ++i) {
    T* row = scores.ptr() + i * len;
    double mx = row[0] * inv;
    for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, row[j] * inv);
    double se = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      const double e = std::exp(row[j] * inv - mx);
      row[j] = static_cast<T>(e);
      se += e;
    }
    for (std::size_t j = 0; j < len; ++j) row[j] = static_cast<T>(row[j] / se);
  }
  return kernels::matmul(scores, x);
}

#define PMTK_INSTANTIATE_SSM(T)                                                                                    \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                                      \
  template Tensor<T> unpatchify(const Tensor<T>&, const Shape&, std::size_t);                                      \
  template Tensor<T> tokens_to_map(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                       \
  template Tensor<T> map_to_tokens(const Tensor<T>&);                                                              \
  template Var<T> tokens_to_map(Var<T>, std::size_t, std::size_t, std::size_t);                                    \
  template Var<T> patch_embed(Var<T>, const PatchEmbedConfig&, Var<T>, Var<T>);                                    \
  template Tensor<T> selective_scan_reference(const ScanInputs<T>&);                                               \
  template Tensor<T> selective_scan_chunked(const ScanInputs<T>&, std::size_t, Tensor<T>*);                        \
  template Var<T> selective_scan(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, std::size_t, bool);               \
  template Var<T> causal_conv1d(Var<T>, Var<T>, Var<T>, std::size_t);                                              \
  template Var<T> bidirectional_scan(Var<T>, const SsmParams<T>&, const SsmParams<T>&, std::size_t);               \
  template Var<T> vim_block(Var<T>, const VimBlockWeights<T>&, std::size_t);                                       \
  template Tensor<T> attention_reference(const Tensor<T>&);

PMTK_INSTANTIATE_SSM(float)
PMTK_INSTANTIATE_SSM(double)

}  // namespace pmtk::ssm
