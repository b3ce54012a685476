#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "tsl/arch.hpp"
#include "tsl/cost_model.hpp"

using namespace tsl;

namespace {

int count_recurrent(const ArchSpec& s) {
  int n = 0;
  for (const auto& l : s.layers)
    if (l.is_recurrent()) ++n;
  return n;
}

int count_heads(const ArchSpec& s) {
  int n = 0;
  for (const auto& l : s.layers)
    if (l.kind == LayerKind::box_head) ++n;
  return n;
}

}  // namespace

TEST_CASE("extended width multiplier") {
  CHECK(scale_channels(1024, NetworkPart::base, 1.0) == 1024);
  CHECK(scale_channels(1024, NetworkPart::ssd, 1.0) == 512);
  CHECK(scale_channels(1024, NetworkPart::lstm, 1.0) == 256);
  CHECK(scale_channels(1024, NetworkPart::lstm, 0.5) == 128);
  CHECK(scale_channels(512, NetworkPart::base, 0.5) == 256);
  CHECK(scale_channels(3, NetworkPart::lstm, 0.25) == 1);   // floor of 1
  CHECK(scale_channels(10, NetworkPart::base, 0.75) == 8);  // round half up
  CHECK(scale_channels(2, NetworkPart::ssd, 0.5) == 1);
}

TEST_CASE("single_conv13 placement at full width") {
  BuildOptions opts;
  opts.placement = parse_placement("single_conv13");
  ArchSpec spec = build_arch(opts);
  const LayerDesc* lstm = spec.find("Conv13/lstm");
  REQUIRE(lstm != nullptr);
  CHECK(lstm->kind == LayerKind::bottleneck_lstm);
  CHECK(lstm->in_ch == 1024);
  CHECK(lstm->out_ch == 256);
  CHECK(count_recurrent(spec) == 1);
  CHECK(count_heads(spec) == 5);
  // Conv13 sits at stride 32: a 320 input leaves a 10x10 map, so the layer's
  // MAC must equal the published per-layer cost at D_F = 10.
  CostReport r = model_report(spec, 320);
  for (const auto& l : r.layers)
    if (l.name == "Conv13/lstm") {
      CHECK(l.mac_eq4 == 61056000);
      CHECK(l.mac_table1 == 60134400);
    }
  // Head behind the LSTM consumes the bottlenecked width.
  const LayerDesc* head = spec.find("Head_Conv13");
  REQUIRE(head != nullptr);
  CHECK(head->in_ch == 256);
  CHECK(head->input == "Conv13/lstm");
  CHECK(head->out_ch == 3 * (30 + 1 + 4));
}

TEST_CASE("half width variant") {
  BuildOptions opts;
  opts.alpha = 0.5;
  opts.resolution = 256;
  opts.placement = parse_placement("single_conv13");
  ArchSpec spec = build_arch(opts);
  const LayerDesc* lstm = spec.find("Conv13/lstm");
  REQUIRE(lstm != nullptr);
  CHECK(lstm->in_ch == 512);
  CHECK(lstm->out_ch == 128);
  CostReport r = model_report(spec, 256);
  for (const auto& l : r.layers)
    if (l.name == "Conv13/lstm") {
      CHECK(l.mac_eq4 == 10100736);
      CHECK(l.mac_table1 == 9805824);
    }
}

TEST_CASE("stacked placement keeps the bottleneck width in the second cell") {
  BuildOptions opts;
  opts.placement = parse_placement("stacked_conv13");
  ArchSpec spec = build_arch(opts);
  CHECK(count_recurrent(spec) == 2);
  const LayerDesc* second = spec.find("Conv13/lstm2");
  REQUIRE(second != nullptr);
  CHECK(second->in_ch == 256);
  CHECK(second->out_ch == 256);
  CHECK(spec.find("Head_Conv13")->input == "Conv13/lstm2");
}

TEST_CASE("feature-map prefix and all_feature_maps placements") {
  BuildOptions opts;
  opts.placement = parse_placement("conv13_fm2");
  ArchSpec spec = build_arch(opts);
  CHECK(count_recurrent(spec) == 3);
  REQUIRE(spec.find("FM2/lstm") != nullptr);
  CHECK(spec.find("FM3/lstm") == nullptr);

  opts.placement = parse_placement("all_feature_maps");
  spec = build_arch(opts);
  CHECK(count_recurrent(spec) == 5);
  // Last two scales keep their width (no bottleneck).
  CHECK(spec.find("FM3/lstm")->out_ch == spec.find("FM3/lstm")->in_ch);
  CHECK(spec.find("FM4/lstm")->out_ch == spec.find("FM4/lstm")->in_ch);
  CHECK(spec.find("FM1/lstm")->out_ch ==
        scale_channels(spec.find("FM1/lstm")->in_ch, NetworkPart::lstm, 1.0));
  // Heads follow the recurrent outputs at every scale.
  for (const char* h : {"Head_Conv13", "Head_FM1", "Head_FM2", "Head_FM3", "Head_FM4"})
    CHECK(spec.find(h)->input.find("/lstm") != std::string::npos);

  CHECK_THROWS(build_arch([] {
    BuildOptions o;
    o.placement = parse_placement("conv13_fm9");
    return o;
  }()));
}

TEST_CASE("placement none is a plain single-frame detector") {
  BuildOptions opts;
  opts.placement = parse_placement("none");
  ArchSpec spec = build_arch(opts);
  CHECK(count_recurrent(spec) == 0);
  CHECK(spec.find("Head_Conv13")->input == "Conv13");
  CHECK(spec.find("Conv13")->out_ch == 1024);
}

TEST_CASE("early placement needs the explicit override") {
  BuildOptions opts;
  opts.placement = parse_placement("after:Conv3");
  CHECK_THROWS_WITH_AS(build_arch(opts), doctest::Contains("early-placement"),
                       std::invalid_argument);
  opts.allow_early_placement = true;
  ArchSpec spec = build_arch(opts);
  REQUIRE(spec.find("Conv3/lstm") != nullptr);
  CHECK(spec.find("Conv4")->in_ch == spec.find("Conv3/lstm")->out_ch);
}

TEST_CASE("alternative recurrent types keep their input width") {
  BuildOptions opts;
  opts.placement = parse_placement("single_conv13");
  for (LayerKind k : {LayerKind::conv_lstm, LayerKind::conv_gru, LayerKind::averaging}) {
    opts.lstm_type = k;
    ArchSpec spec = build_arch(opts);
    const LayerDesc* l = spec.find("Conv13/lstm");
    REQUIRE(l != nullptr);
    CHECK(l->kind == k);
    CHECK(l->out_ch == 1024);
  }
}

TEST_CASE("toy stack: Conv1..Conv7 plus two feature maps") {
  BuildOptions opts;
  opts.toy = true;
  opts.resolution = 64;
  opts.num_classes = 3;
  opts.placement = parse_placement("single_conv13");
  ArchSpec spec = build_arch(opts);
  CHECK(spec.find("Conv7") != nullptr);
  CHECK(spec.find("Conv8") == nullptr);
  const LayerDesc* lstm = spec.find("Conv7/lstm");
  REQUIRE(lstm != nullptr);
  CHECK(lstm->in_ch == 64);
  CHECK(lstm->out_ch == 16);
  CHECK(count_heads(spec) == 3);
  CHECK(spec.find("Head_Conv7")->out_ch == 3 * (3 + 1 + 4));
  // anchor scales increase across sources
  double prev = 0.0;
  for (const auto& l : spec.layers)
    if (l.kind == LayerKind::box_head) {
      CHECK(l.anchor_scale > prev);
      prev = l.anchor_scale;
    }
}

TEST_CASE("bad build options are rejected") {
  BuildOptions opts;
  opts.resolution = 100;
  CHECK_THROWS_AS(build_arch(opts), std::invalid_argument);
  opts.resolution = 320;
  opts.alpha = 0.0;
  CHECK_THROWS_AS(build_arch(opts), std::invalid_argument);
  opts.alpha = 1.0;
  opts.num_classes = 0;
  CHECK_THROWS_AS(build_arch(opts), std::invalid_argument);
}

TEST_CASE("totals grow monotonically with alpha") {
  std::int64_t prev_params = 0, prev_mac = 0;
  for (double a : {0.25, 0.5, 0.75, 1.0}) {
    BuildOptions opts;
    opts.alpha = a;
    opts.placement = parse_placement("single_conv13");
    CostReport r = model_report(build_arch(opts), 320);
    CHECK(r.total_params > prev_params);
    CHECK(r.total_mac_eq4 > prev_mac);
    prev_params = r.total_params;
    prev_mac = r.total_mac_eq4;
  }
}

TEST_CASE("serialize / parse round trip") {
  BuildOptions opts;
  opts.alpha = 0.5;
  opts.resolution = 256;
  opts.placement = parse_placement("all_feature_maps");
  opts.form = BottleneckForm::eq2;
  ArchSpec spec = build_arch(opts);
  std::string text = serialize_arch(spec);
  ArchSpec back = parse_arch(text);
  CHECK(serialize_arch(back) == text);
  CHECK(back.layers.size() == spec.layers.size());
  CHECK(back.alpha == spec.alpha);
  CHECK(back.find("Conv13/lstm")->form == BottleneckForm::eq2);

  std::string path = "/tmp/tsl_arch_roundtrip.txt";
  save_arch(spec, path);
  ArchSpec loaded = load_arch(path);
  CHECK(serialize_arch(loaded) == text);
  std::remove(path.c_str());

  CHECK_THROWS_AS(parse_arch("BOGUS 7\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_arch("TSL-ARCH 1\nwhatever 3\n"), std::invalid_argument);
}

TEST_CASE("placement string round trip") {
  for (const char* s : {"none", "single_conv13", "stacked_conv13", "conv13_fm2",
                        "all_feature_maps", "after:FM1"})
    CHECK(parse_placement(s).str() == s);
  CHECK_THROWS_AS(parse_placement("everywhere"), std::invalid_argument);
}
