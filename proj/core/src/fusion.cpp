#include "capsfuse/fusion.hpp"

#include <cmath>
#include <numbers>

#include "capsfuse/errors.hpp"

namespace capsfuse {

std::string_view to_string(ConfidenceKind k) {
  switch (k) {
    case ConfidenceKind::Text: return "text";
    case ConfidenceKind::Image: return "image";
    case ConfidenceKind::Numeric: return "numeric";
  }
  return "unknown";
}

namespace ops {

ad::Var cosine_last(ad::Var a, ad::Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) {
    throw DimensionError("cosine_last: shapes " + shape_to_string(A.shape()) + " and " + shape_to_string(B.shape()));
  }
  const std::size_t d = A.shape().back();
  const std::size_t rows = A.size() / d;
  Shape out_shape = A.rank() > 1 ? Shape(A.shape().begin(), A.shape().end() - 1) : Shape{1};
  Tensor Z(out_shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      dot += A[r * d + i] * B[r * d + i];
      aa += A[r * d + i] * A[r * d + i];
      bb += B[r * d + i] * B[r * d + i];
    }
    const double denom = std::sqrt(aa) * std::sqrt(bb);
    Z[r] = denom > 1e-9 ? dot / denom : 0.0;
  }
  return a.tape().record(std::move(Z), {a, b}, [d, rows](const ad::GradContext& ctx) {
    const auto& A = *ctx.inputs[0];
    const auto& B = *ctx.inputs[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * d;
      double aa = 0.0, bb = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        aa += A[o + i] * A[o + i];
        bb += B[o + i] * B[o + i];
      }
      const double na = std::sqrt(aa), nb = std::sqrt(bb);
      if (na * nb <= 1e-9) continue;
      const double z = ctx.output[r];
      const double g = ctx.output_grad[r];
      if (auto* ga = ctx.input_grads[0])
        for (std::size_t i = 0; i < d; ++i) (*ga)[o + i] += g * (B[o + i] / (na * nb) - z * A[o + i] / aa);
      if (auto* gb = ctx.input_grads[1])
        for (std::size_t i = 0; i < d; ++i) (*gb)[o + i] += g * (A[o + i] / (na * nb) - z * B[o + i] / bb);
    }
  });
}

ad::Var certainty(ad::Var p) {
  Tensor Z = p.value();
  for (auto& v : Z.data()) v = v < 1e-12 ? 1.0 : 1.0 - v * std::log2(v);
  return p.tape().record(std::move(Z), {p}, [](const ad::GradContext& ctx) {
    const auto& P = *ctx.inputs[0];
    auto* gp = ctx.input_grads[0];
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (P[i] < 1e-12) continue;
      (*gp)[i] -= ctx.output_grad[i] * (std::log2(P[i]) + std::numbers::log2e);
    }
  });
}

}  // namespace ops

ad::Var image_confidence(const CapsuleTensor& digits) { return ad::norm_last(squash(digits.var())); }

ad::Var text_confidence(const CapsuleTensor& first, const CapsuleTensor& second) {
  return ops::cosine_last(first.var(), second.var());
}

ad::Var numeric_confidence(const CapsuleTensor& digits) {
  return ops::certainty(ad::softmax(ad::norm_last(digits.var())));
}

std::vector<ConfidenceVector> confidence_vectors(ConfidenceKind kind, const Tensor& batch_values) {
  if (batch_values.rank() != 2) throw DimensionError("confidence batch must be [B x N_c]");
  std::vector<ConfidenceVector> out;
  const std::size_t n = batch_values.dim(1);
  for (std::size_t b = 0; b < batch_values.dim(0); ++b) {
    auto row = batch_values.data().subspan(b * n, n);
    out.push_back({kind, std::vector<double>(row.begin(), row.end())});
  }
  return out;
}

GateOutput fuse_gate(ad::Var z_text, ad::Var z_image, ad::Var z_numeric, const GateParams& params) {
  if (z_text.shape() != z_image.shape() || z_text.shape() != z_numeric.shape()) {
    throw DimensionError("fuse_gate: confidence shapes " + shape_to_string(z_text.shape()) + ", " +
                         shape_to_string(z_image.shape()) + ", " + shape_to_string(z_numeric.shape()));
  }
  const ad::Var parts[] = {ad::scale(z_text, params.omega_text), ad::scale(z_image, params.omega_image),
                           ad::scale(z_numeric, params.omega_numeric)};
  auto f = ad::concat_last(parts);
  auto g = ad::tanh(ad::add_bias(ad::matmul(f, params.weight), params.bias));
  return {f, g};
}

FusionCapsNet::FusionCapsNet(const ModelConfig& config, std::uint64_t seed) : Model(config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto& c = config;
  const std::size_t J = c.n_classes;

  std::vector<std::size_t> sizes{c.inputs.numeric};
  sizes.insert(sizes.end(), c.numeric_hidden.begin(), c.numeric_hidden.end());
  sizes.push_back(c.numeric_embed_dim);
  numeric_encoder = Mlp::create("numeric_encoder", sizes, rng);

  auto stack = [&](const std::string& name, std::size_t in_dim) {
    CapsuleStack s;
    s.primary = PrimaryCapsuleLayer::create(name + ".primary", c.n_primary, in_dim, c.primary_dim,
                                            c.apply_squash_primary, rng);
    s.digit = DigitCapsuleLayer::create(name + ".digit", c.n_primary, J, c.primary_dim, c.digit_dim,
                                        c.routing_iters, rng);
    return s;
  };
  text_a = stack("text_a", c.inputs.text_a);
  if (!c.share_text_weights) text_b = stack("text_b", c.inputs.text_b);
  image = stack("image", c.inputs.image);
  numeric = stack("numeric", c.numeric_embed_dim);

  omega_text = Parameter("omega.text", Tensor::scalar(1.0));
  omega_image = Parameter("omega.image", Tensor::scalar(1.0));
  omega_numeric = Parameter("omega.numeric", Tensor::scalar(1.0));
  gate_weight = Parameter("gate.weight", glorot_uniform({3 * J, J}, 3 * J, J, rng));
  gate_bias = Parameter("gate.bias", Tensor({J}, 0.0));
  head_weight = Parameter("head.weight", glorot_uniform({J, J}, J, J, rng));
  head_bias = Parameter("head.bias", Tensor({J}, 0.0));
}

std::vector<Parameter*> FusionCapsNet::parameters() {
  std::vector<Parameter*> out;
  numeric_encoder.collect(out);
  for (auto* s : {&text_a, &text_b, &image, &numeric}) {
    if (s == &text_b && config().share_text_weights) continue;
    out.push_back(&s->primary.projections);
    out.push_back(&s->digit.transforms);
  }
  for (auto* p : {&omega_text, &omega_image, &omega_numeric, &gate_weight, &gate_bias, &head_weight, &head_bias})
    out.push_back(p);
  return out;
}

struct FusionCapsNet::Pass {
  ad::Var probs;
  RouteResult text_a, text_b, image, numeric;
  ad::Var z_text, z_image, z_numeric;
  GateOutput gate;
};

FusionCapsNet::Pass FusionCapsNet::run(ad::Tape& tape, const Batch& batch) {
  check_batch(config(), batch);
  auto& tb = config().share_text_weights ? text_a : text_b;
  auto encode = [&](CapsuleStack& s, ad::Var e) { return capsfuse::route(s.digit, project_primary(s.primary, e)); };

  auto e_numeric = numeric_encoder.apply(tape, tape.constant(batch.numeric));
  auto ra = encode(text_a, tape.constant(batch.text_a));
  auto rb = encode(tb, tape.constant(batch.text_b));
  auto ri = encode(image, tape.constant(batch.image));
  auto rn = encode(numeric, e_numeric);

  auto z_text = text_confidence(ra.digits, rb.digits);
  auto z_image = image_confidence(ri.digits);
  auto z_numeric = numeric_confidence(rn.digits);
  GateParams gp{tape.parameter(omega_text), tape.parameter(omega_image), tape.parameter(omega_numeric),
                tape.parameter(gate_weight), tape.parameter(gate_bias)};
  auto gate = fuse_gate(z_text, z_image, z_numeric, gp);
  auto logits = ad::add_bias(ad::matmul(gate.g, tape.parameter(head_weight)), tape.parameter(head_bias));
  return {ad::softmax(logits), ra, rb, ri, rn, z_text, z_image, z_numeric, gate};
}

ad::Var FusionCapsNet::forward(ad::Tape& tape, const Batch& batch) { return run(tape, batch).probs; }

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t b) {
  const std::size_t n = t.size() / t.dim(0);
  auto row = t.data().subspan(b * n, n);
  return {row.begin(), row.end()};
}

Tensor slice_sample(const Tensor& coeffs, std::size_t b) {
  const std::size_t K = coeffs.dim(1), J = coeffs.dim(2);
  auto row = coeffs.data().subspan(b * K * J, K * J);
  return Tensor({K, J}, std::vector<double>(row.begin(), row.end()));
}

}  // namespace

FusionCapsNet::Output FusionCapsNet::forward_traced(ad::Tape& tape, const Batch& batch, std::size_t first_index) {
  auto pass = run(tape, batch);
  Output out{pass.probs, {}};
  out.trace.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    SampleTrace t;
    t.index = first_index + b;
    t.label = batch.labels[b];
    t.routing = {{"text_a", slice_sample(pass.text_a.coefficients, b)},
                 {"text_b", slice_sample(pass.text_b.coefficients, b)},
                 {"image", slice_sample(pass.image.coefficients, b)},
                 {"numeric", slice_sample(pass.numeric.coefficients, b)}};
    t.z_text = row_of(pass.z_text.value(), b);
    t.z_image = row_of(pass.z_image.value(), b);
    t.z_numeric = row_of(pass.z_numeric.value(), b);
    t.omega = {omega_text.value[0], omega_image.value[0], omega_numeric.value[0]};
    t.f = row_of(pass.gate.f.value(), b);
    t.g = row_of(pass.gate.g.value(), b);
    t.probs = row_of(pass.probs.value(), b);
    out.trace.push_back(std::move(t));
  }
  return out;
}

}  // namespace capsfuse
