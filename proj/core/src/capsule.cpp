#include "capsfuse/capsule.hpp"

#include <cmath>

#include "capsfuse/errors.hpp"

namespace capsfuse {

namespace {

constexpr double kNormEps = 1e-9;

// Scale applied to s by squash, as a function of its norm.
double squash_factor(double n) { return n * n / ((1.0 + n * n) * (n + kNormEps)); }

double squash_factor_derivative(double n) {
  const double a = n * n;
  const double b = (1.0 + n * n) * (n + kNormEps);
  const double db = 2.0 * n * (n + kNormEps) + (1.0 + n * n);
  return (2.0 * n * b - a * db) / (b * b);
}

}  // namespace

CapsuleTensor::CapsuleTensor(ad::Var data) : data_(data) {
  if (data_.value().rank() != 3) {
    throw DimensionError("capsule tensor must be rank 3, got " + shape_to_string(data_.shape()));
  }
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

PrimaryCapsuleLayer PrimaryCapsuleLayer::create(const std::string& name, std::size_t n_capsules,
                                                std::size_t in_dim, std::size_t cap_dim, bool apply_squash,
                                                std::mt19937_64& rng) {
  PrimaryCapsuleLayer layer;
  layer.n_capsules = n_capsules;
  layer.in_dim = in_dim;
  layer.cap_dim = cap_dim;
  layer.apply_squash = apply_squash;
  layer.projections = Parameter(name, glorot_uniform({n_capsules, in_dim, cap_dim}, in_dim, cap_dim, rng));
  return layer;
}

Tensor PrimaryCapsuleLayer::projection(std::size_t k) const {
  if (k >= n_capsules) throw ContractError("projection index out of range");
  const auto all = projections.value.data();
  const std::size_t stride = in_dim * cap_dim;
  return Tensor({in_dim, cap_dim}, std::vector<double>(all.begin() + k * stride, all.begin() + (k + 1) * stride));
}

DigitCapsuleLayer DigitCapsuleLayer::create(const std::string& name, std::size_t n_in, std::size_t n_out,
                                            std::size_t in_dim, std::size_t out_dim, std::size_t routing_iters,
                                            std::mt19937_64& rng) {
  if (routing_iters < 1) throw ConfigError("routing_iters must be >= 1");
  DigitCapsuleLayer layer;
  layer.n_in = n_in;
  layer.n_out = n_out;
  layer.in_dim = in_dim;
  layer.out_dim = out_dim;
  layer.routing_iters = routing_iters;
  layer.transforms = Parameter(name, glorot_uniform({n_in, n_out, in_dim, out_dim}, in_dim, out_dim, rng));
  return layer;
}

ad::Var squash(ad::Var s) {
  const auto& S = s.value();
  const std::size_t d = S.shape().back();
  const std::size_t rows = S.size() / d;
  Tensor out = S;
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) sq += S[r * d + i] * S[r * d + i];
    const double f = squash_factor(std::sqrt(sq));
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] *= f;
  }
  return s.tape().record(std::move(out), {s}, [d, rows](const ad::GradContext& ctx) {
    const auto& S = *ctx.inputs[0];
    const auto& g = ctx.output_grad;
    auto* gs = ctx.input_grads[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * d;
      double sq = 0.0, gdot = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        sq += S[o + i] * S[o + i];
        gdot += g[o + i] * S[o + i];
      }
      const double n = std::sqrt(sq);
      const double f = squash_factor(n);
      const double radial = n > 0.0 ? squash_factor_derivative(n) / n * gdot : 0.0;
      for (std::size_t i = 0; i < d; ++i) (*gs)[o + i] += f * g[o + i] + radial * S[o + i];
    }
  });
}

Tensor squash(const Tensor& s) {
  ad::Tape tape;
  return squash(tape.constant(s)).value();
}

namespace ops {

ad::Var project_capsules(ad::Var e, ad::Var w) {
  const auto& E = e.value();
  const auto& W = w.value();
  if (E.rank() != 2 || W.rank() != 3 || W.dim(1) != E.dim(1)) {
    throw DimensionError("project_capsules: embedding " + shape_to_string(E.shape()) +
                         " does not match projections " + shape_to_string(W.shape()));
  }
  const std::size_t B = E.dim(0), din = E.dim(1), K = W.dim(0), dout = W.dim(2);
  Tensor P({B, K, dout}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      double* out = P.raw() + (b * K + k) * dout;
      for (std::size_t i = 0; i < din; ++i) {
        const double ev = E[b * din + i];
        const double* wrow = W.raw() + (k * din + i) * dout;
        for (std::size_t o = 0; o < dout; ++o) out[o] += ev * wrow[o];
      }
    }
  return e.tape().record(std::move(P), {e, w}, [B, din, K, dout](const ad::GradContext& ctx) {
    const auto& E = *ctx.inputs[0];
    const auto& W = *ctx.inputs[1];
    const auto& g = ctx.output_grad;
    auto* ge = ctx.input_grads[0];
    auto* gw = ctx.input_grads[1];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const double* gout = g.raw() + (b * K + k) * dout;
        for (std::size_t i = 0; i < din; ++i) {
          const std::size_t wo = (k * din + i) * dout;
          if (ge) {
            double acc = 0.0;
            for (std::size_t o = 0; o < dout; ++o) acc += gout[o] * W[wo + o];
            (*ge)[b * din + i] += acc;
          }
          if (gw) {
            const double ev = E[b * din + i];
            for (std::size_t o = 0; o < dout; ++o) (*gw)[wo + o] += ev * gout[o];
          }
        }
      }
  });
}

ad::Var capsule_votes(ad::Var p, ad::Var w) {
  const auto& P = p.value();
  const auto& W = w.value();
  if (P.rank() != 3 || W.rank() != 4 || W.dim(0) != P.dim(1) || W.dim(2) != P.dim(2)) {
    throw DimensionError("capsule_votes: capsules " + shape_to_string(P.shape()) + " do not match transforms " +
                         shape_to_string(W.shape()));
  }
  const std::size_t B = P.dim(0), K = P.dim(1), din = P.dim(2), J = W.dim(1), dout = W.dim(3);
  Tensor U({B, K, J, dout}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k) {
      const double* pv = P.raw() + (b * K + k) * din;
      for (std::size_t j = 0; j < J; ++j) {
        double* out = U.raw() + ((b * K + k) * J + j) * dout;
        const double* wm = W.raw() + (k * J + j) * din * dout;
        for (std::size_t i = 0; i < din; ++i) {
          const double pi = pv[i];
          const double* wrow = wm + i * dout;
          for (std::size_t o = 0; o < dout; ++o) out[o] += pi * wrow[o];
        }
      }
    }
  return p.tape().record(std::move(U), {p, w}, [B, K, din, J, dout](const ad::GradContext& ctx) {
    const auto& P = *ctx.inputs[0];
    const auto& W = *ctx.inputs[1];
    const auto& g = ctx.output_grad;
    auto* gp = ctx.input_grads[0];
    auto* gw = ctx.input_grads[1];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k) {
        const double* pv = P.raw() + (b * K + k) * din;
        for (std::size_t j = 0; j < J; ++j) {
          const double* gout = g.raw() + ((b * K + k) * J + j) * dout;
          const std::size_t wm = (k * J + j) * din * dout;
          for (std::size_t i = 0; i < din; ++i) {
            if (gp) {
              double acc = 0.0;
              for (std::size_t o = 0; o < dout; ++o) acc += gout[o] * W[wm + i * dout + o];
              (*gp)[(b * K + k) * din + i] += acc;
            }
            if (gw) {
              const double pi = pv[i];
              double* gwrow = gw->raw() + wm + i * dout;
              for (std::size_t o = 0; o < dout; ++o) gwrow[o] += pi * gout[o];
            }
          }
        }
      }
  });
}

ad::Var weighted_votes(ad::Var c, ad::Var u) {
  const auto& C = c.value();
  const auto& U = u.value();
  if (C.rank() != 3 || U.rank() != 4 || C.dim(0) != U.dim(0) || C.dim(1) != U.dim(1) || C.dim(2) != U.dim(2)) {
    throw DimensionError("weighted_votes: coefficients " + shape_to_string(C.shape()) + " do not match votes " +
                         shape_to_string(U.shape()));
  }
  const std::size_t B = U.dim(0), K = U.dim(1), J = U.dim(2), D = U.dim(3);
  Tensor S({B, J, D}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < J; ++j) {
        const double cv = C[(b * K + k) * J + j];
        const double* uv = U.raw() + ((b * K + k) * J + j) * D;
        double* out = S.raw() + (b * J + j) * D;
        for (std::size_t d = 0; d < D; ++d) out[d] += cv * uv[d];
      }
  return c.tape().record(std::move(S), {c, u}, [B, K, J, D](const ad::GradContext& ctx) {
    const auto& C = *ctx.inputs[0];
    const auto& U = *ctx.inputs[1];
    const auto& g = ctx.output_grad;
    auto* gc = ctx.input_grads[0];
    auto* gu = ctx.input_grads[1];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < J; ++j) {
          const std::size_t ci = (b * K + k) * J + j;
          const double* gs = g.raw() + (b * J + j) * D;
          const double* uv = U.raw() + ci * D;
          if (gc) {
            double acc = 0.0;
            for (std::size_t d = 0; d < D; ++d) acc += gs[d] * uv[d];
            (*gc)[ci] += acc;
          }
          if (gu) {
            double* gut = gu->raw() + ci * D;
            for (std::size_t d = 0; d < D; ++d) gut[d] += C[ci] * gs[d];
          }
        }
  });
}

ad::Var agreement(ad::Var u, ad::Var v) {
  const auto& U = u.value();
  const auto& V = v.value();
  if (U.rank() != 4 || V.rank() != 3 || V.dim(0) != U.dim(0) || V.dim(1) != U.dim(2) || V.dim(2) != U.dim(3)) {
    throw DimensionError("agreement: votes " + shape_to_string(U.shape()) + " do not match outputs " +
                         shape_to_string(V.shape()));
  }
  const std::size_t B = U.dim(0), K = U.dim(1), J = U.dim(2), D = U.dim(3);
  Tensor A({B, K, J}, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t j = 0; j < J; ++j) {
        const double* uv = U.raw() + ((b * K + k) * J + j) * D;
        const double* vv = V.raw() + (b * J + j) * D;
        double acc = 0.0;
        for (std::size_t d = 0; d < D; ++d) acc += uv[d] * vv[d];
        A[(b * K + k) * J + j] = acc;
      }
  return u.tape().record(std::move(A), {u, v}, [B, K, J, D](const ad::GradContext& ctx) {
    const auto& U = *ctx.inputs[0];
    const auto& V = *ctx.inputs[1];
    const auto& g = ctx.output_grad;
    auto* gu = ctx.input_grads[0];
    auto* gv = ctx.input_grads[1];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < J; ++j) {
          const std::size_t ai = (b * K + k) * J + j;
          const double ga = g[ai];
          const double* uv = U.raw() + ai * D;
          const double* vv = V.raw() + (b * J + j) * D;
          if (gu) {
            double* out = gu->raw() + ai * D;
            for (std::size_t d = 0; d < D; ++d) out[d] += ga * vv[d];
          }
          if (gv) {
            double* out = gv->raw() + (b * J + j) * D;
            for (std::size_t d = 0; d < D; ++d) out[d] += ga * uv[d];
          }
        }
  });
}

}  // namespace ops

CapsuleTensor project_primary(PrimaryCapsuleLayer& layer, ad::Var e) {
  const auto& E = e.value();
  if (E.rank() != 2 || E.dim(1) != layer.in_dim) {
    throw DimensionError("project_primary: embedding " + shape_to_string(E.shape()) + " but layer expects width " +
                         std::to_string(layer.in_dim));
  }
  auto& tape = e.tape();
  auto w = tape.parameter(layer.projections);
  auto p = ops::project_capsules(e, w);
  return CapsuleTensor(layer.apply_squash ? squash(p) : p);
}

RouteResult route(DigitCapsuleLayer& layer, const CapsuleTensor& primary) {
  if (primary.capsules() != layer.n_in || primary.capsule_dim() != layer.in_dim) {
    throw DimensionError("route: primary capsules " + shape_to_string(primary.value().shape()) +
                         " do not match layer expecting " + std::to_string(layer.n_in) + " x " +
                         std::to_string(layer.in_dim));
  }
  if (layer.routing_iters < 1) throw ContractError("route: routing_iters must be >= 1");
  auto& tape = primary.var().tape();
  auto w = tape.parameter(layer.transforms);
  auto votes = ops::capsule_votes(primary.var(), w);

  ad::Var logits = tape.constant(Tensor({primary.batch(), layer.n_in, layer.n_out}, 0.0));
  ad::Var coeffs;
  ad::Var s;
  for (std::size_t it = 0; it < layer.routing_iters; ++it) {
    coeffs = ad::softmax(logits);
    s = ops::weighted_votes(coeffs, votes);
    if (it + 1 == layer.routing_iters) break;
    logits = ad::add(logits, ops::agreement(votes, squash(s)));
  }
  return {CapsuleTensor(s), coeffs.value()};
}

}  // namespace capsfuse
