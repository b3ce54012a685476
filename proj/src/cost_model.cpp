#include "tsl/cost_model.hpp"

#include <iomanip>
#include <map>
#include <sstream>

namespace tsl {

std::int64_t lstm_cost(std::int64_t m, std::int64_t n, std::int64_t df, std::int64_t dk) {
  return 4 * (dk * dk * (m + n) * df * df + (m + n) * n * df * df);
}

std::int64_t gru_cost(std::int64_t m, std::int64_t n, std::int64_t df, std::int64_t dk) {
  return 3 * (dk * dk * (m + n) * df * df + (m + n) * n * df * df);
}

std::int64_t bottleneck_cost(std::int64_t m, std::int64_t n, std::int64_t df,
                             std::int64_t dk, BottleneckCostForm form) {
  if (form == BottleneckCostForm::eq4)
    return dk * dk * (m + n) * df * df + (m + n) * n * df * df +
           4 * (dk * dk * n * df * df + n * n * df * df);
  return (dk * dk * m + (m + n) * n + dk * dk * n + 4 * n * n) * df * df;
}

Crossover crossover_check(std::int64_t m, std::int64_t n, std::int64_t dk,
                          CrossoverBaseline vs) {
  std::int64_t base = vs == CrossoverBaseline::lstm ? lstm_cost(m, n, 1, dk)
                                                    : gru_cost(m, n, 1, dk);
  std::int64_t bn = bottleneck_cost(m, n, 1, dk, BottleneckCostForm::eq4);
  if (bn < base) return Crossover::bottleneck_cheaper;
  if (bn > base) return Crossover::lstm_cheaper;
  return Crossover::equal;
}

std::int64_t layer_params(const LayerDesc& l) {
  const std::int64_t k2 = static_cast<std::int64_t>(l.kernel) * l.kernel;
  const std::int64_t m = l.in_ch, n = l.out_ch;
  std::int64_t bias = l.bias ? n : 0;
  switch (l.kind) {
    case LayerKind::full_conv:
      return k2 * m * n + bias;
    case LayerKind::separable_conv:
    case LayerKind::box_head:
      return k2 * m + m * n + bias;
    case LayerKind::conv_lstm:
      return 4 * (k2 * (m + n) + (m + n) * n);
    case LayerKind::conv_gru:
      return 3 * (k2 * (m + n) + (m + n) * n);
    case LayerKind::bottleneck_lstm:
      if (l.form == BottleneckForm::table1)
        return k2 * m + (m + n) * n + k2 * n + 4 * n * n;
      return k2 * (m + n) + (m + n) * n + 4 * (k2 * n + n * n);
    case LayerKind::averaging:
      return 0;
  }
  return 0;
}

CostReport model_report(const ArchSpec& spec, int resolution) {
  CostReport report;
  report.alpha = spec.alpha;
  report.resolution = resolution;

  struct Extent {
    int h, w;
  };
  std::map<std::string, Extent> extents;
  Extent prev{resolution, resolution};

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    Extent in = prev;
    if (!l.input.empty()) {
      auto it = extents.find(l.input);
      check(it != extents.end(), l.name + ": unresolved input " + l.input);
      in = it->second;
    }
    Extent out{(in.h + l.stride - 1) / l.stride, (in.w + l.stride - 1) / l.stride};
    check(out.h >= 1 && out.w >= 1,
          l.name + ": stride chain exhausts the spatial extent");
    const std::int64_t pos = static_cast<std::int64_t>(out.h) * out.w;
    const std::int64_t m = l.in_ch, n = l.out_ch;
    const std::int64_t k2 = static_cast<std::int64_t>(l.kernel) * l.kernel;

    LayerCost cost;
    cost.name = l.name;
    cost.params = layer_params(l);
    switch (l.kind) {
      case LayerKind::full_conv:
      case LayerKind::separable_conv:
      case LayerKind::box_head: {
        std::int64_t mac = (cost.params - (l.bias ? n : 0)) * pos;
        cost.mac_eq4 = cost.mac_table1 = mac;
        break;
      }
      case LayerKind::conv_lstm:
        cost.mac_eq4 = cost.mac_table1 = lstm_cost(m, n, 1, l.kernel) * pos;
        break;
      case LayerKind::conv_gru:
        cost.mac_eq4 = cost.mac_table1 = gru_cost(m, n, 1, l.kernel) * pos;
        break;
      case LayerKind::bottleneck_lstm: {
        cost.mac_eq4 = bottleneck_cost(m, n, 1, l.kernel, BottleneckCostForm::eq4) * pos;
        cost.mac_table1 =
            bottleneck_cost(m, n, 1, l.kernel, BottleneckCostForm::table1) * pos;
        // The published per-layer MAC matches the table1 sum with the final
        // N -> 4N gate convolution excluded; reported for reconciliation but
        // not adopted as a counting rule.
        std::int64_t table1_params = k2 * m + (m + n) * n + k2 * n + 4 * n * n;
        std::ostringstream note;
        note << l.name << ": gate-conv-excluded MAC = " << (table1_params - 4 * n * n) * pos
             << " (table1 params " << table1_params << " minus 4N^2 gate conv, x"
             << pos << " positions)";
        report.notes.push_back(note.str());
        break;
      }
      case LayerKind::averaging:
        cost.mac_eq4 = cost.mac_table1 = 0;
        break;
    }
    report.layers.push_back(cost);
    report.total_params += cost.params;
    report.total_mac_eq4 += cost.mac_eq4;
    report.total_mac_table1 += cost.mac_table1;

    extents[l.name] = out;
    if (l.input.empty()) prev = out;
  }
  return report;
}

std::string CostReport::to_csv() const {
  std::ostringstream out;
  out << "layer,params,mac_eq4,mac_table1\n";
  for (const auto& l : layers)
    out << l.name << "," << l.params << "," << l.mac_eq4 << "," << l.mac_table1 << "\n";
  out << "TOTAL," << total_params << "," << total_mac_eq4 << "," << total_mac_table1
      << "\n";
  return out.str();
}

std::string CostReport::to_json() const {
  std::ostringstream out;
  out << "{\n  \"alpha\": " << alpha << ",\n  \"resolution\": " << resolution
      << ",\n  \"layers\": [\n";
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    out << "    {\"name\": \"" << l.name << "\", \"params\": " << l.params
        << ", \"mac_eq4\": " << l.mac_eq4 << ", \"mac_table1\": " << l.mac_table1
        << "}" << (i + 1 < layers.size() ? "," : "") << "\n";
  }
  out << "  ],\n  \"total_params\": " << total_params
      << ",\n  \"total_mac_eq4\": " << total_mac_eq4
      << ",\n  \"total_mac_table1\": " << total_mac_table1 << ",\n  \"notes\": [";
  for (std::size_t i = 0; i < notes.size(); ++i)
    out << "\"" << notes[i] << "\"" << (i + 1 < notes.size() ? ", " : "");
  out << "]\n}\n";
  return out.str();
}

std::string CostReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(24) << "layer" << std::right << std::setw(14)
      << "params" << std::setw(16) << "mac_eq4" << std::setw(16) << "mac_table1"
      << "\n";
  for (const auto& l : layers)
    out << std::left << std::setw(24) << l.name << std::right << std::setw(14)
        << l.params << std::setw(16) << l.mac_eq4 << std::setw(16) << l.mac_table1
        << "\n";
  out << std::left << std::setw(24) << "TOTAL" << std::right << std::setw(14)
      << total_params << std::setw(16) << total_mac_eq4 << std::setw(16)
      << total_mac_table1 << "\n";
  for (const auto& n : notes) out << "note: " << n << "\n";
  return out.str();
}

}  // namespace tsl
