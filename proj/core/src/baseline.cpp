#include "capsfuse/baseline.hpp"

#include <cmath>

#include "capsfuse/capsule.hpp"
#include "capsfuse/errors.hpp"

namespace capsfuse {

namespace {

constexpr std::array<const char*, 4> kRoles = {"text_a", "text_b", "image", "numeric"};

void check_same_shape(const char* op, std::span<const ad::Var> parts) {
  if (parts.empty()) throw ContractError(std::string(op) + ": no inputs");
  for (const auto& p : parts) {
    if (p.shape() != parts[0].shape()) {
      throw DimensionError(std::string(op) + ": shapes " + shape_to_string(parts[0].shape()) + " and " +
                           shape_to_string(p.shape()));
    }
  }
}

}  // namespace

ad::Var fuse_add(std::span<const ad::Var> adapted) {
  check_same_shape("fuse_add", adapted);
  return ad::add_n(adapted);
}

ad::Var fuse_concat(std::span<const ad::Var> adapted) {
  check_same_shape("fuse_concat", adapted);
  return ad::concat_last(adapted);
}

namespace ops {

ad::Var attend(ad::Var q, ad::Var keys, ad::Var values, double scale, Tensor* weights_out) {
  const auto& Q = q.value();
  const auto& K = keys.value();
  const auto& V = values.value();
  if (Q.rank() != 2 || K.rank() != 3 || K.shape() != V.shape() || K.dim(0) != Q.dim(0) || K.dim(2) != Q.dim(1)) {
    throw DimensionError("attend: query " + shape_to_string(Q.shape()) + ", keys " + shape_to_string(K.shape()) +
                         ", values " + shape_to_string(V.shape()));
  }
  const std::size_t B = Q.dim(0), M = K.dim(1), D = Q.dim(1);
  Tensor alpha({B, M}, 0.0);
  Tensor out({B, D}, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double mx = -INFINITY;
    for (std::size_t m = 0; m < M; ++m) {
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += Q.at(b, d) * K.at(b, m, d);
      alpha.at(b, m) = scale * s;
      mx = std::max(mx, alpha.at(b, m));
    }
    double z = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      alpha.at(b, m) = std::exp(alpha.at(b, m) - mx);
      z += alpha.at(b, m);
    }
    for (std::size_t m = 0; m < M; ++m) {
      alpha.at(b, m) /= z;
      for (std::size_t d = 0; d < D; ++d) out.at(b, d) += alpha.at(b, m) * V.at(b, m, d);
    }
  }
  if (weights_out) *weights_out = alpha;
  return q.tape().record(std::move(out), {q, keys, values}, [alpha, B, M, D, scale](const ad::GradContext& ctx) {
    const auto& Q = *ctx.inputs[0];
    const auto& K = *ctx.inputs[1];
    const auto& V = *ctx.inputs[2];
    const auto& g = ctx.output_grad;
    std::vector<double> ds(M);
    for (std::size_t b = 0; b < B; ++b) {
      // d alpha_m = g . v_m ; d s_m = alpha_m (d alpha_m - sum alpha d alpha)
      double mean = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        double da = 0.0;
        for (std::size_t d = 0; d < D; ++d) da += g.at(b, d) * V.at(b, m, d);
        ds[m] = da;
        mean += alpha.at(b, m) * da;
      }
      for (std::size_t m = 0; m < M; ++m) ds[m] = alpha.at(b, m) * (ds[m] - mean) * scale;
      if (auto* gv = ctx.input_grads[2])
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t d = 0; d < D; ++d) gv->at(b, m, d) += alpha.at(b, m) * g.at(b, d);
      if (auto* gq = ctx.input_grads[0])
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t d = 0; d < D; ++d) gq->at(b, d) += ds[m] * K.at(b, m, d);
      if (auto* gk = ctx.input_grads[1])
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t d = 0; d < D; ++d) gk->at(b, m, d) += ds[m] * Q.at(b, d);
    }
  });
}

}  // namespace ops

CrossAttentionOutput fuse_cross_attention(std::span<const ad::Var> adapted, const CrossAttentionParams& params) {
  check_same_shape("fuse_cross_attention", adapted);
  const std::size_t M = adapted.size();
  if (M < 2) throw ContractError("fuse_cross_attention needs at least two modalities");
  if (params.query.size() != M || params.key.size() != M || params.value.size() != M)
    throw ContractError("fuse_cross_attention: one query/key/value projection per modality required");
  const auto& shape = adapted[0].shape();
  if (shape.size() != 2) throw DimensionError("fuse_cross_attention expects [B x d_f] inputs");
  const std::size_t B = shape[0], D = shape[1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));

  std::vector<ad::Var> q, k, v;
  for (std::size_t m = 0; m < M; ++m) {
    q.push_back(ad::matmul(adapted[m], params.query[m]));
    k.push_back(ad::matmul(adapted[m], params.key[m]));
    v.push_back(ad::matmul(adapted[m], params.value[m]));
  }
  CrossAttentionOutput result{{}, Tensor({B, M, M - 1}, 0.0)};
  std::vector<ad::Var> outputs;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<ad::Var> ks, vs;
    for (std::size_t o = 0; o < M; ++o) {
      if (o == m) continue;
      ks.push_back(k[o]);
      vs.push_back(v[o]);
    }
    Tensor w;
    outputs.push_back(ops::attend(q[m], ad::stack_rows(ks), ad::stack_rows(vs), scale, &w));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o + 1 < M; ++o) result.weights.at(b, m, o) = w.at(b, o);
  }
  result.fused = ad::scale(ad::add_n(outputs), 1.0 / static_cast<double>(M));
  return result;
}

BaselineModel::BaselineModel(const ModelConfig& config, std::uint64_t seed) : Model(config) {
  config.validate();
  if (config.strategy == FusionStrategy::CapsNet) throw ConfigError("BaselineModel cannot run the capsnet strategy");
  std::mt19937_64 rng(seed);
  const auto& c = config;
  std::vector<std::size_t> sizes{c.inputs.numeric};
  sizes.insert(sizes.end(), c.numeric_hidden.begin(), c.numeric_hidden.end());
  sizes.push_back(c.numeric_embed_dim);
  numeric_encoder = Mlp::create("numeric_encoder", sizes, rng);

  const std::array<std::size_t, 4> widths = {c.inputs.text_a, c.inputs.text_b, c.inputs.image, c.numeric_embed_dim};
  for (std::size_t m = 0; m < 4; ++m)
    adapters[m] = DenseLayer::create(std::string("adapter.") + kRoles[m], widths[m], c.fused_dim, rng);
  if (c.strategy == FusionStrategy::CrossAttention) {
    const std::size_t d = c.fused_dim;
    for (std::size_t m = 0; m < 4; ++m) {
      query[m] = Parameter(std::string("attention.query.") + kRoles[m], glorot_uniform({d, d}, d, d, rng));
      key[m] = Parameter(std::string("attention.key.") + kRoles[m], glorot_uniform({d, d}, d, d, rng));
      value[m] = Parameter(std::string("attention.value.") + kRoles[m], glorot_uniform({d, d}, d, d, rng));
    }
  }
  classifier = Mlp::create("classifier", {fused_width(), c.classifier_hidden, c.n_classes}, rng);
}

std::size_t BaselineModel::fused_width() const {
  return config().strategy == FusionStrategy::Concatenation ? 4 * config().fused_dim : config().fused_dim;
}

std::vector<Parameter*> BaselineModel::parameters() {
  std::vector<Parameter*> out;
  numeric_encoder.collect(out);
  for (auto& a : adapters) {
    out.push_back(&a.weight);
    out.push_back(&a.bias);
  }
  if (config().strategy == FusionStrategy::CrossAttention) {
    for (std::size_t m = 0; m < 4; ++m) {
      out.push_back(&query[m]);
      out.push_back(&key[m]);
      out.push_back(&value[m]);
    }
  }
  classifier.collect(out);
  return out;
}

ad::Var BaselineModel::forward(ad::Tape& tape, const Batch& batch) {
  check_batch(config(), batch);
  auto e_numeric = numeric_encoder.apply(tape, tape.constant(batch.numeric));
  const std::array<ad::Var, 4> inputs = {tape.constant(batch.text_a), tape.constant(batch.text_b),
                                         tape.constant(batch.image), e_numeric};
  std::vector<ad::Var> adapted;
  for (std::size_t m = 0; m < 4; ++m) adapted.push_back(adapters[m].apply(tape, inputs[m]));

  ad::Var fused;
  switch (config().strategy) {
    case FusionStrategy::Addition: fused = fuse_add(adapted); break;
    case FusionStrategy::Concatenation: fused = fuse_concat(adapted); break;
    case FusionStrategy::CrossAttention: {
      CrossAttentionParams p;
      for (std::size_t m = 0; m < 4; ++m) {
        p.query.push_back(tape.parameter(query[m]));
        p.key.push_back(tape.parameter(key[m]));
        p.value.push_back(tape.parameter(value[m]));
      }
      fused = fuse_cross_attention(adapted, p).fused;
      break;
    }
    case FusionStrategy::CapsNet: throw ContractError("unreachable");
  }
  return ad::softmax(classifier.apply(tape, fused));
}

}  // namespace capsfuse
