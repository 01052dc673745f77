#include "longreg/diffeo.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "longreg/adjoint.hpp"

namespace longreg {

int exp_steps_for(const VectorField& flow, const ExpPolicy& policy) {
  if (policy.fixed_steps > 0) return policy.fixed_steps;
  const double m = flow.max_norm();
  int n = policy.min_steps;
  while (n < policy.max_steps && m / std::ldexp(1.0, n) > policy.max_step_norm) ++n;
  return n;
}

ExpTrace exp_flow_traced(const VectorField& flow, int n_iter) {
  if (n_iter < 1) throw std::invalid_argument("exp_flow: n_iter must be >= 1");
  if (!flow.all_finite()) throw std::invalid_argument("exp_flow: non-finite flow");
  ExpTrace trace;
  trace.steps.reserve(std::size_t(n_iter) + 1);
  trace.steps.push_back(std::ldexp(1.0, -n_iter) * VectorField(flow));
  for (int i = 0; i < n_iter; ++i) {
    const VectorField& u = trace.steps.back();
    trace.steps.push_back(u + warp_field(u, u));
  }
  return trace;
}

VectorField exp_flow_vjp(const ExpTrace& trace, const VectorField& result_grad) {
  VectorField g = result_grad;
  for (std::size_t i = trace.steps.size() - 1; i > 0; --i) {
    const VectorField& u = trace.steps[i - 1];
    // u_next = u + warp(u, u): identity path plus both warp arguments.
    VectorField prev = g;
    warp_field_vjp(u, u, g, &prev, &prev);
    g = std::move(prev);
  }
  g *= std::ldexp(1.0, -int(trace.steps.size() - 1));
  return g;
}

VectorField exp_flow(const VectorField& flow, int n_iter) {
  if (n_iter < 1) throw std::invalid_argument("exp_flow: n_iter must be >= 1");
  VectorField u = std::ldexp(1.0, -n_iter) * VectorField(flow);
  for (int i = 0; i < n_iter; ++i) u += warp_field(u, u);
  return u;
}

VectorField exp_flow(const VectorField& flow, const ExpPolicy& policy) {
  return exp_flow(flow, exp_steps_for(flow, policy));
}

VectorField invert_flow_exp(const VectorField& flow, int n_iter) { return exp_flow(-flow, n_iter); }

VectorField invert_flow_exp(const VectorField& flow, const ExpPolicy& policy) {
  return exp_flow(-flow, exp_steps_for(flow, policy));
}

std::vector<int> chain_gaps(int from, int to) {
  std::vector<int> gaps;
  if (from > to) {
    for (int g = to; g < from; ++g) gaps.push_back(g);
  } else {
    for (int g = to - 1; g >= from; --g) gaps.push_back(g);
  }
  return gaps;
}

VectorField compose_chain(const GapDisplacements& gaps, int from, int to) {
  const int n = gaps.sessions();
  if (gaps.forward.empty()) throw std::invalid_argument("compose_chain: empty chain");
  if (gaps.backward.size() != gaps.forward.size())
    throw std::invalid_argument("compose_chain: forward/backward gap count mismatch");
  if (from < 0 || from >= n || to < 0 || to >= n)
    throw std::invalid_argument("compose_chain: session index out of range (from=" +
                                std::to_string(from) + ", to=" + std::to_string(to) + ")");
  if (from == to) throw std::invalid_argument("compose_chain: from == to");
  const auto& links = from > to ? gaps.forward : gaps.backward;
  const std::vector<int> order = chain_gaps(from, to);
  VectorField u = links[std::size_t(order.front())];
  for (std::size_t m = 1; m < order.size(); ++m) u += warp_field(links[std::size_t(order[m])], u);
  return u;
}

}  // namespace longreg
