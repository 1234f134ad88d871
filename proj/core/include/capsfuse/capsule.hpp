#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "capsfuse/autodiff.hpp"

namespace capsfuse {

// Rank-3 activation batch x capsules x capsule_dim.
class CapsuleTensor {
 public:
  explicit CapsuleTensor(ad::Var data);

  ad::Var var() const { return data_; }
  const Tensor& value() const { return data_.value(); }
  std::size_t batch() const { return value().dim(0); }
  std::size_t capsules() const { return value().dim(1); }
  std::size_t capsule_dim() const { return value().dim(2); }

 private:
  ad::Var data_;
};

// batch x n_in x n_out; each (sample, input capsule) row is a softmax over outputs.
using RoutingCoefficients = Tensor;

// Glorot-uniform fill: U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))).
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

struct PrimaryCapsuleLayer {
  std::size_t n_capsules = 0;
  std::size_t in_dim = 0;
  std::size_t cap_dim = 0;
  bool apply_squash = true;
  // n_capsules stacked in_dim x cap_dim projection matrices.
  Parameter projections;

  static PrimaryCapsuleLayer create(const std::string& name, std::size_t n_capsules, std::size_t in_dim,
                                    std::size_t cap_dim, bool apply_squash, std::mt19937_64& rng);
  // Copy of the k-th projection matrix.
  Tensor projection(std::size_t k) const;
};

struct DigitCapsuleLayer {
  std::size_t n_in = 0;
  std::size_t n_out = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::size_t routing_iters = 3;
  // n_in x n_out transformation matrices, each in_dim x out_dim. Never aliases
  // the primary projections.
  Parameter transforms;

  static DigitCapsuleLayer create(const std::string& name, std::size_t n_in, std::size_t n_out,
                                  std::size_t in_dim, std::size_t out_dim, std::size_t routing_iters,
                                  std::mt19937_64& rng);
};

struct RouteResult {
  CapsuleTensor digits;  // unsquashed s_j
  RoutingCoefficients coefficients;
};

// squash(s) = |s|^2/(1+|s|^2) * s/(|s| + 1e-9) over the last axis.
ad::Var squash(ad::Var s);
Tensor squash(const Tensor& s);

// Capsule k of each sample is e * W_k, optionally squashed.
// Binds the layer's parameter to the tape, so gradients land in layer.projections.grad.
CapsuleTensor project_primary(PrimaryCapsuleLayer& layer, ad::Var e);

// Routing-by-agreement. Logits start at zero every call; softmax runs over the
// output capsules; agreement uses the squashed outputs and is skipped after the
// last iteration. Returns the unsquashed outputs.
RouteResult route(DigitCapsuleLayer& layer, const CapsuleTensor& primary);

namespace ops {

// e[B x din], W[K x din x dout] -> [B x K x dout]
ad::Var project_capsules(ad::Var e, ad::Var w);
// p[B x K x din], W[K x J x din x dout] -> votes u[B x K x J x dout]
ad::Var capsule_votes(ad::Var p, ad::Var w);
// c[B x K x J], u[B x K x J x D] -> s[B x J x D] = sum_k c_kj u_kj
ad::Var weighted_votes(ad::Var c, ad::Var u);
// u[B x K x J x D], v[B x J x D] -> a[B x K x J] = <u_kj, v_j>
ad::Var agreement(ad::Var u, ad::Var v);

}  // namespace ops

}  // namespace capsfuse
