#include "capsfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "capsfuse/errors.hpp"

namespace capsfuse {

namespace {

void check_eps(double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("finite_diff_check: eps must lie in (0, 1e-2]");
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double eval_scalar(const ScalarFn& fn, const Tensor& x) {
  ad::Tape tape;
  return fn(tape, tape.constant(x)).value().item();
}

double eval_loss(const LossFn& fn) {
  ad::Tape tape;
  return fn(tape).value().item();
}

}  // namespace

double finite_diff_check(const ScalarFn& fn, const Tensor& x, double eps) {
  check_eps(eps);
  Tensor analytic;
  {
    ad::Tape tape;
    auto leaf = tape.variable(x);
    tape.backward(fn(tape, leaf));
    analytic = *tape.grad(leaf);
  }
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = eval_scalar(fn, probe);
    probe[i] = x[i] - eps;
    const double down = eval_scalar(fn, probe);
    probe[i] = x[i];
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

GradCheckResult finite_diff_check(const LossFn& fn, std::span<Parameter* const> params, double eps) {
  check_eps(eps);
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape tape;
    tape.backward(fn(tape));
  }
  std::vector<Tensor> analytic;
  for (auto* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      value[i] = orig + eps;
      const double up = eval_loss(fn);
      value[i] = orig - eps;
      const double down = eval_loss(fn);
      value[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[pi][i], numeric);
      if (err > result.max_relative_error) {
        result = {err, params[pi]->name, i, analytic[pi][i], numeric};
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

}  // namespace capsfuse
