#pragma once

#include <functional>
#include <random>
#include <vector>

#include "tsl/gradcheck.hpp"
#include "tsl/tape.hpp"
#include "tsl/tensor.hpp"

namespace tsltest {

inline tsl::Tensor64 random_tensor(tsl::Shape s, std::mt19937& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  tsl::Tensor64 t(s);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

inline tsl::Tensor random_tensor_f(tsl::Shape s, std::mt19937& rng, float scale = 1.0f) {
  std::normal_distribution<float> dist(0.0f, scale);
  tsl::Tensor t(s);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

// Builds loss = sum(build(inputs) .* r) with a fixed random weighting r, then
// checks every input's tape gradient against central differences.
inline double check_graph(
    const std::function<int(tsl::Tape<double>&, const std::vector<int>&)>& build,
    std::vector<tsl::Tensor64> inputs, unsigned seed, double eps = 1e-5,
    double* kink_distance = nullptr) {
  using Tape = tsl::Tape<double>;
  std::mt19937 rng(seed);

  auto run = [&](const std::vector<tsl::Tensor64>& ins, tsl::Tensor64* r_io,
                 std::vector<tsl::Tensor64>* grads) -> double {
    Tape tp;
    std::vector<int> refs;
    for (const auto& t : ins) refs.push_back(tp.input(t, true));
    int out = build(tp, refs);
    if (kink_distance)
      *kink_distance = std::min(*kink_distance, tp.kink_distance());
    if (r_io->data.empty()) *r_io = random_tensor(tp.value(out).dims, rng, 1.0);
    int r = tp.constant(*r_io);
    int loss = tp.sum(tp.hadamard(out, r));
    if (grads) {
      tp.backward(loss);
      grads->clear();
      for (std::size_t i = 0; i < refs.size(); ++i) {
        tsl::Tensor64 g(ins[i].dims);
        g.data = tp.grad(refs[i]);
        grads->push_back(std::move(g));
      }
    }
    return tp.value(loss).data[0];
  };

  if (kink_distance) *kink_distance = std::numeric_limits<double>::infinity();

  tsl::Tensor64 r;
  std::vector<tsl::Tensor64> analytic;
  run(inputs, &r, &analytic);

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const tsl::Tensor64& x) {
      std::vector<tsl::Tensor64> ins = inputs;
      ins[i] = x;
      return run(ins, &r, nullptr);
    };
    worst = std::max(worst, tsl::finite_diff_check(f, inputs[i], analytic[i], eps));
  }
  return worst;
}

// Central differences are unreliable within ~eps of a relu kink; redraw the
// sample when the forward pass lands too close to one.
inline double check_graph_resampled(
    const std::function<int(tsl::Tape<double>&, const std::vector<int>&)>& build,
    const std::function<std::vector<tsl::Tensor64>(std::mt19937&)>& make_inputs,
    unsigned seed, double eps = 1e-5, double margin = 1e-3) {
  double err = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::mt19937 rng(seed * 1000003u + attempt);
    double kd = 0.0;
    err = check_graph(build, make_inputs(rng), seed, eps, &kd);
    if (kd > margin) return err;
  }
  return err;
}

}  // namespace tsltest
