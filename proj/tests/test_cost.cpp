#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "tsl/cost_model.hpp"

using namespace tsl;

namespace {

LayerDesc conv(LayerKind kind, int kernel, int in, int out, bool bias = false) {
  LayerDesc l;
  l.kind = kind;
  l.kernel = kernel;
  l.in_ch = in;
  l.out_ch = out;
  l.bias = bias;
  return l;
}

// Instrumented convolution over an explicitly zero-padded input: every
// multiply the arithmetic would perform is counted.
std::int64_t count_separable_multiplies(int h, int w, int in, int out, int k, int stride) {
  std::int64_t count = 0;
  int oh = (h + stride - 1) / stride, ow = (w + stride - 1) / stride;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          for (int c = 0; c < in; ++c) ++count;  // depthwise taps (padded)
      (void)y;
      (void)x;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ic = 0; ic < in; ++ic)
        for (int oc = 0; oc < out; ++oc) ++count;  // pointwise
  return count;
}

}  // namespace

TEST_CASE("standard LSTM cost formula") {
  CHECK(lstm_cost(1024, 1024, 10) == 846233600);
  CHECK(lstm_cost(512, 512, 8) == 136577024);
  CHECK(lstm_cost(1, 1, 1, 1) == 16);
  // within 1% of the published 840M / 135M
  CHECK(std::abs(lstm_cost(1024, 1024, 10) - 840e6) / 840e6 < 0.01);
  CHECK(std::abs(lstm_cost(512, 512, 8) - 135e6) / 135e6 < 0.012);
}

TEST_CASE("GRU cost: leading coefficient 3") {
  CHECK(gru_cost(1024, 1024, 10) == 634675200);
  CHECK(gru_cost(512, 512, 8) == 102432768);
  CHECK(gru_cost(1, 1, 1, 1) == 12);
  CHECK(std::abs(gru_cost(1024, 1024, 10) - 632e6) / 632e6 < 0.005);
}

TEST_CASE("bottleneck cost in both conventions") {
  CHECK(bottleneck_cost(1024, 256, 10, 3, BottleneckCostForm::eq4) == 61056000);
  CHECK(bottleneck_cost(1024, 256, 10, 3, BottleneckCostForm::table1) == 60134400);
  CHECK(bottleneck_cost(512, 128, 8, 3, BottleneckCostForm::eq4) == 10100736);
  CHECK(bottleneck_cost(512, 128, 8, 3, BottleneckCostForm::table1) == 9805824);
}

TEST_CASE("crossover identities: equality at M = N/3 (LSTM) and M = N (GRU)") {
  for (std::int64_t n = 4; n <= 1024; ++n) {
    if (n % 3 == 0) {
      std::int64_t m = n / 3;
      CHECK(bottleneck_cost(m, n, 7, 3, BottleneckCostForm::eq4) == lstm_cost(m, n, 7));
      CHECK(crossover_check(m, n) == Crossover::equal);
      CHECK(crossover_check(m + 1, n) == Crossover::bottleneck_cheaper);
      if (m > 1) CHECK(crossover_check(m - 1, n) == Crossover::lstm_cheaper);
    }
    CHECK(bottleneck_cost(n, n, 5, 3, BottleneckCostForm::eq4) == gru_cost(n, n, 5));
    CHECK(crossover_check(n, n, 3, CrossoverBaseline::gru) == Crossover::equal);
    CHECK(crossover_check(n + 1, n, 3, CrossoverBaseline::gru) ==
          Crossover::bottleneck_cheaper);
  }
  CHECK(crossover_check(1024, 256) == Crossover::bottleneck_cheaper);
  CHECK(crossover_check(1024, 256, 3, CrossoverBaseline::gru) ==
        Crossover::bottleneck_cheaper);
}

TEST_CASE("crossover sign property over 10^4 (M, N) pairs") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 10000; ++trial) {
    std::int64_t m = 1 + rng() % 1024;
    std::int64_t n = 1 + rng() % 1024;
    std::int64_t df = 1 + rng() % 16;
    std::int64_t eq4 = bottleneck_cost(m, n, df, 3, BottleneckCostForm::eq4);
    std::int64_t ls = lstm_cost(m, n, df);
    if (3 * m > n) CHECK(eq4 < ls);
    if (3 * m < n) CHECK(eq4 > ls);
    if (3 * m == n) CHECK(eq4 == ls);
  }
}

TEST_CASE("layer parameter counting") {
  CHECK(layer_params(conv(LayerKind::separable_conv, 3, 512, 1024)) == 528896);
  CHECK(layer_params(conv(LayerKind::bottleneck_lstm, 3, 1024, 256)) == 601344);
  CHECK(layer_params(conv(LayerKind::full_conv, 1, 32, 64)) == 2048);
  CHECK(layer_params(conv(LayerKind::averaging, 3, 64, 64)) == 0);
  CHECK(layer_params(conv(LayerKind::box_head, 3, 256, 105, true)) ==
        9 * 256 + 256 * 105 + 105);
}

TEST_CASE("recurrent layer params reproduce the published table") {
  auto within = [](std::int64_t got, double published_m, double tol) {
    return std::abs(got / 1e6 - published_m) / published_m < tol;
  };
  CHECK(layer_params(conv(LayerKind::conv_lstm, 3, 1024, 1024)) == 8462336);
  CHECK(layer_params(conv(LayerKind::conv_gru, 3, 1024, 1024)) == 6346752);
  CHECK(within(layer_params(conv(LayerKind::conv_lstm, 3, 1024, 1024)), 8.41, 0.01));
  CHECK(within(layer_params(conv(LayerKind::conv_gru, 3, 1024, 1024)), 6.33, 0.01));
  CHECK(layer_params(conv(LayerKind::conv_lstm, 3, 512, 512)) == 2134016);
  CHECK(layer_params(conv(LayerKind::conv_gru, 3, 512, 512)) == 1600512);
  CHECK(within(layer_params(conv(LayerKind::conv_lstm, 3, 512, 512)), 2.11, 0.012));
  CHECK(within(layer_params(conv(LayerKind::conv_gru, 3, 512, 512)), 1.59, 0.01));
  CHECK(layer_params(conv(LayerKind::bottleneck_lstm, 3, 512, 128)) == 153216);
}

TEST_CASE("conv MAC equals params times output positions") {
  for (auto [h, w, in, out, k, s] :
       {std::array<int, 6>{6, 8, 3, 5, 3, 1}, {7, 7, 4, 2, 3, 2}, {5, 5, 2, 7, 1, 1}}) {
    LayerDesc l = conv(LayerKind::separable_conv, k, in, out);
    l.stride = s;
    std::int64_t oh = (h + s - 1) / s, ow = (w + s - 1) / s;
    std::int64_t mac = layer_params(l) * oh * ow;
    CHECK(mac == count_separable_multiplies(h, w, in, out, k, s));
  }
}

TEST_CASE("model report: full-scale totals land near the published whole-model rows") {
  BuildOptions opts;
  opts.alpha = 1.0;
  opts.resolution = 320;
  opts.placement = parse_placement("all_feature_maps");
  ArchSpec spec = build_arch(opts);
  CostReport r = model_report(spec, 320);
  CHECK(std::abs(r.total_params / 1e6 - 3.24) / 3.24 < 0.10);
  CHECK(std::abs(r.total_mac_table1 / 1e9 - 1.13) / 1.13 < 0.15);
  CHECK(std::abs(r.total_mac_eq4 / 1e9 - 1.13) / 1.13 < 0.15);
  CHECK(!r.notes.empty());

  BuildOptions half = opts;
  half.alpha = 0.5;
  half.resolution = 256;
  CostReport r2 = model_report(build_arch(half), 256);
  CHECK(std::abs(r2.total_params / 1e6 - 0.86) / 0.86 < 0.10);
  CHECK(std::abs(r2.total_mac_table1 / 1e9 - 0.19) / 0.19 < 0.15);
}

TEST_CASE("report totals are invariant under layer reordering") {
  BuildOptions opts;
  opts.placement = parse_placement("single_conv13");
  CostReport r = model_report(build_arch(opts), 320);
  std::mt19937 rng(32);
  std::vector<LayerCost> shuffled = r.layers;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::int64_t params = 0, mac = 0;
  for (const auto& l : shuffled) {
    params += l.params;
    mac += l.mac_table1;
  }
  CHECK(params == r.total_params);
  CHECK(mac == r.total_mac_table1);
}

TEST_CASE("empty architecture reports zero totals") {
  ArchSpec spec;
  CostReport r = model_report(spec, 320);
  CHECK(r.total_params == 0);
  CHECK(r.total_mac_eq4 == 0);
  CHECK(r.layers.empty());
}

TEST_CASE("csv and json report shapes") {
  BuildOptions opts;
  opts.placement = parse_placement("single_conv13");
  CostReport r = model_report(build_arch(opts), 320);
  std::string csv = r.to_csv();
  CHECK(csv.rfind("layer,params,mac_eq4,mac_table1\n", 0) == 0);
  CHECK(csv.find("TOTAL,") != std::string::npos);
  CHECK(r.to_json().find("\"total_params\"") != std::string::npos);
}
