#include "capsfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "capsfuse/errors.hpp"

namespace capsfuse::ad {

const Tensor& Var::value() const { return tape_->value(*this); }
bool Var::requires_grad() const { return tape_->requires_grad(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  Node n;
  n.grad = Tensor(value.shape(), 0.0);
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.grad = Tensor(p.value.shape(), 0.0);
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardRule rule) {
  Node n;
  n.value = std::move(value);
  n.is_leaf = false;
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (&in.tape() != this) throw ContractError("operation mixes nodes from different tapes");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.rule = std::move(rule);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

const Tensor* Tape::grad(Var v) const {
  const auto& n = nodes_[v.id()];
  return n.requires_grad ? &n.grad : nullptr;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw ContractError("loss belongs to another tape");
  auto& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(root.value.shape()));
  }
  if (!root.requires_grad) return;

  for (auto& n : nodes_) {
    if (n.requires_grad && (!n.is_leaf || n.param)) n.grad.fill(0.0);
  }
  root.grad[0] += 1.0;

  std::vector<const Tensor*> in_values;
  std::vector<Tensor*> in_grads;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.is_leaf || !n.requires_grad) continue;
    in_values.clear();
    in_grads.clear();
    for (auto in : n.inputs) {
      auto& src = nodes_[in];
      in_values.push_back(&src.value);
      in_grads.push_back(src.requires_grad ? &src.grad : nullptr);
    }
    n.rule(GradContext{in_values, n.value, n.grad, in_grads});
  }

  for (auto& n : nodes_) {
    if (!n.param) continue;
    auto dst = n.param->grad.data();
    auto src = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                       shape_to_string(b));
}

Shape drop_last(const Shape& s) {
  if (s.size() <= 1) return {1};
  return Shape(s.begin(), s.end() - 1);
}

}  // namespace

Var matmul(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) shape_mismatch("matmul", A.shape(), B.shape());
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n}, 0.0);
  const double* pa = A.raw();
  const double* pb = B.raw();
  double* pc = C.raw();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      const double* brow = pb + l * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return a.tape().record(std::move(C), {a, b}, [m, k, n](const GradContext& ctx) {
    const double* pa = ctx.inputs[0]->raw();
    const double* pb = ctx.inputs[1]->raw();
    const double* g = ctx.output_grad.raw();
    if (auto* ga = ctx.input_grads[0]) {
      // dA = dC * B^T
      double* p = ga->raw();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * pb[l * n + j];
          p[i * k + l] += acc;
        }
    }
    if (auto* gb = ctx.input_grads[1]) {
      // dB = A^T * dC
      double* p = gb->raw();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          const double av = pa[i * k + l];
          for (std::size_t j = 0; j < n; ++j) p[l * n + j] += av * g[i * n + j];
        }
    }
  });
}

Var add(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) shape_mismatch("add", A.shape(), B.shape());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
  return a.tape().record(std::move(C), {a, b}, [](const GradContext& ctx) {
    for (auto* g : ctx.input_grads) {
      if (!g) continue;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.output_grad[i];
    }
  });
}

Var add_n(std::span<const Var> terms) {
  if (terms.empty()) throw ContractError("add_n needs at least one term");
  const auto& first = terms[0].value();
  Tensor C = first;
  for (std::size_t t = 1; t < terms.size(); ++t) {
    const auto& T = terms[t].value();
    if (T.shape() != first.shape()) shape_mismatch("add_n", first.shape(), T.shape());
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += T[i];
  }
  return terms[0].tape().record(std::move(C), std::vector<Var>(terms.begin(), terms.end()),
                                [](const GradContext& ctx) {
                                  for (auto* g : ctx.input_grads) {
                                    if (!g) continue;
                                    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += ctx.output_grad[i];
                                  }
                                });
}

Var add_bias(Var x, Var bias) {
  const auto& X = x.value();
  const auto& b = bias.value();
  if (X.rank() != 2 || b.size() != X.dim(1)) shape_mismatch("add_bias", X.shape(), b.shape());
  const std::size_t rows = X.dim(0), cols = X.dim(1);
  Tensor Y = X;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) Y[r * cols + c] += b[c];
  return x.tape().record(std::move(Y), {x, bias}, [rows, cols](const GradContext& ctx) {
    const auto& g = ctx.output_grad;
    if (auto* gx = ctx.input_grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    if (auto* gb = ctx.input_grads[1])
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g[r * cols + c];
  });
}

Var mul(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.shape() != B.shape()) shape_mismatch("mul", A.shape(), B.shape());
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
  return a.tape().record(std::move(C), {a, b}, [](const GradContext& ctx) {
    const auto& g = ctx.output_grad;
    if (auto* ga = ctx.input_grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (*ctx.inputs[1])[i];
    if (auto* gb = ctx.input_grads[1])
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * (*ctx.inputs[0])[i];
  });
}

Var scale(Var x, Var s) {
  if (s.value().size() != 1) shape_mismatch("scale", x.shape(), s.shape());
  const double k = s.value()[0];
  Tensor Y = x.value();
  for (auto& v : Y.data()) v *= k;
  return x.tape().record(std::move(Y), {x, s}, [](const GradContext& ctx) {
    const auto& g = ctx.output_grad;
    const auto& X = *ctx.inputs[0];
    const double k = (*ctx.inputs[1])[0];
    if (auto* gx = ctx.input_grads[0])
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * k;
    if (auto* gs = ctx.input_grads[1]) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * X[i];
      (*gs)[0] += acc;
    }
  });
}

Var scale(Var x, double s) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v *= s;
  return x.tape().record(std::move(Y), {x}, [s](const GradContext& ctx) {
    auto* gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.output_grad[i] * s;
  });
}

Var tanh(Var x) {
  Tensor Y = x.value();
  for (auto& v : Y.data()) v = std::tanh(v);
  return x.tape().record(std::move(Y), {x}, [](const GradContext& ctx) {
    auto* gx = ctx.input_grads[0];
    const auto& y = ctx.output;
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.output_grad[i] * (1.0 - y[i] * y[i]);
  });
}

Var softmax(Var x) {
  const auto& X = x.value();
  const std::size_t n = X.shape().back();
  const std::size_t rows = X.size() / n;
  Tensor Y(X.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = X.raw() + r * n;
    double* out = Y.raw() + r * n;
    double mx = in[0];
    for (std::size_t i = 0; i < n; ++i) {
      if (std::isnan(in[i])) throw NumericError("softmax: NaN input");
      mx = std::max(mx, in[i]);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = std::exp(in[i] - mx);
      z += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= z;
  }
  return x.tape().record(std::move(Y), {x}, [n, rows](const GradContext& ctx) {
    auto* gx = ctx.input_grads[0];
    const auto& y = ctx.output;
    const auto& g = ctx.output_grad;
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[o + i] * y[o + i];
      for (std::size_t i = 0; i < n; ++i) (*gx)[o + i] += y[o + i] * (g[o + i] - dot);
    }
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return x.tape().record(Tensor::scalar(acc), {x}, [](const GradContext& ctx) {
    auto* gx = ctx.input_grads[0];
    const double g = ctx.output_grad[0];
    for (auto& v : gx->data()) v += g;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor Y = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(Y), {x}, [](const GradContext& ctx) {
    auto* gx = ctx.input_grads[0];
    for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += ctx.output_grad[i];
  });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_last needs at least one part");
  const Shape lead = drop_last(parts[0].shape());
  const std::size_t rows = shape_size(lead);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (drop_last(p.shape()) != lead || p.value().rank() != parts[0].value().rank())
      shape_mismatch("concat_last", parts[0].shape(), p.shape());
    widths.push_back(p.shape().back());
    total += widths.back();
  }
  Shape out_shape = parts[0].shape();
  out_shape.back() = total;
  Tensor Y(out_shape, 0.0);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& P = parts[p].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[p]; ++c) Y[r * total + offset + c] = P[r * widths[p] + c];
    offset += widths[p];
  }
  return parts[0].tape().record(std::move(Y), std::vector<Var>(parts.begin(), parts.end()),
                                [widths, rows, total](const GradContext& ctx) {
                                  std::size_t offset = 0;
                                  for (std::size_t p = 0; p < widths.size(); ++p) {
                                    if (auto* gp = ctx.input_grads[p]) {
                                      for (std::size_t r = 0; r < rows; ++r)
                                        for (std::size_t c = 0; c < widths[p]; ++c)
                                          (*gp)[r * widths[p] + c] += ctx.output_grad[r * total + offset + c];
                                    }
                                    offset += widths[p];
                                  }
                                });
}

Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("stack_rows needs at least one part");
  const auto& first = parts[0].value();
  if (first.rank() != 2) throw DimensionError("stack_rows expects [B x d] parts, got " + shape_to_string(first.shape()));
  const std::size_t B = first.dim(0), d = first.dim(1), K = parts.size();
  Tensor Y({B, K, d}, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& P = parts[k].value();
    if (P.shape() != first.shape()) shape_mismatch("stack_rows", first.shape(), P.shape());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < d; ++i) Y.at(b, k, i) = P.at(b, i);
  }
  return parts[0].tape().record(std::move(Y), std::vector<Var>(parts.begin(), parts.end()),
                                [B, K, d](const GradContext& ctx) {
                                  for (std::size_t k = 0; k < K; ++k) {
                                    auto* gp = ctx.input_grads[k];
                                    if (!gp) continue;
                                    for (std::size_t b = 0; b < B; ++b)
                                      for (std::size_t i = 0; i < d; ++i)
                                        gp->at(b, i) += ctx.output_grad.at(b, k, i);
                                  }
                                });
}

Var norm_last(Var x) {
  const auto& X = x.value();
  const std::size_t n = X.shape().back();
  const std::size_t rows = X.size() / n;
  Tensor Y(drop_last(X.shape()), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += X[r * n + i] * X[r * n + i];
    Y[r] = std::sqrt(acc);
  }
  return x.tape().record(std::move(Y), {x}, [n, rows](const GradContext& ctx) {
    auto* gx = ctx.input_grads[0];
    const auto& X = *ctx.inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double len = ctx.output[r];
      if (len == 0.0) continue;
      const double k = ctx.output_grad[r] / len;
      for (std::size_t i = 0; i < n; ++i) (*gx)[r * n + i] += k * X[r * n + i];
    }
  });
}

}  // namespace capsfuse::ad
