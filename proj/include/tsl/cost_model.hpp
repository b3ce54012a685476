#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsl/arch.hpp"

namespace tsl {

// Multiply-add accounting. One multiply-accumulate counts as one MAC;
// elementwise gate arithmetic is excluded, matching the published convention.

// Standard convolutional LSTM cost: 4(Dk^2 (M+N) Df^2 + (M+N) N Df^2).
std::int64_t lstm_cost(std::int64_t m, std::int64_t n, std::int64_t df, std::int64_t dk = 3);

// GRU: leading coefficient 3 instead of 4.
std::int64_t gru_cost(std::int64_t m, std::int64_t n, std::int64_t df, std::int64_t dk = 3);

enum class BottleneckCostForm { eq4, table1 };

// eq4:    Dk^2 (M+N) Df^2 + (M+N) N Df^2 + 4(Dk^2 N Df^2 + N^2 Df^2)
// table1: (Dk^2 M + (M+N) N + Dk^2 N + 4 N^2) Df^2  (layer-by-layer sum)
std::int64_t bottleneck_cost(std::int64_t m, std::int64_t n, std::int64_t df,
                             std::int64_t dk = 3,
                             BottleneckCostForm form = BottleneckCostForm::eq4);

enum class Crossover { lstm_cheaper, equal, bottleneck_cheaper };
enum class CrossoverBaseline { lstm, gru };

// Exact integer comparison of the bottleneck cost (eq4) against a standard
// LSTM or GRU of the same dimensions. With Dk=3 the boundary sits at
// k = M/N = 1/3 (LSTM) and k = 1 (GRU).
Crossover crossover_check(std::int64_t m, std::int64_t n, std::int64_t dk = 3,
                          CrossoverBaseline vs = CrossoverBaseline::lstm);

// Parameter count of one layer; biases included, they cost no multiplies.
std::int64_t layer_params(const LayerDesc& layer);

struct LayerCost {
  std::string name;
  std::int64_t params{0};
  std::int64_t mac_eq4{0};
  std::int64_t mac_table1{0};
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::int64_t total_params{0};
  std::int64_t total_mac_eq4{0};
  std::int64_t total_mac_table1{0};
  double alpha{1.0};
  int resolution{0};
  std::vector<std::string> notes;

  std::string to_csv() const;
  std::string to_json() const;
  std::string to_table() const;
};

// Per-layer parameter and MAC accounting over the architecture's computed
// spatial sizes. Bottleneck layers report both cost conventions.
CostReport model_report(const ArchSpec& spec, int resolution);

}  // namespace tsl
