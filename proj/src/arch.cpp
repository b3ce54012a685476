#include "tsl/arch.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace tsl {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::full_conv: return "full_conv";
    case LayerKind::separable_conv: return "separable_conv";
    case LayerKind::bottleneck_lstm: return "bottleneck_lstm";
    case LayerKind::conv_lstm: return "conv_lstm";
    case LayerKind::conv_gru: return "conv_gru";
    case LayerKind::averaging: return "averaging";
    case LayerKind::box_head: return "box_head";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::full_conv, LayerKind::separable_conv,
                      LayerKind::bottleneck_lstm, LayerKind::conv_lstm,
                      LayerKind::conv_gru, LayerKind::averaging, LayerKind::box_head})
    if (s == layer_kind_name(k)) return k;
  throw std::invalid_argument("unknown layer kind: " + s);
}

std::string Placement::str() const {
  switch (kind) {
    case PlacementKind::none: return "none";
    case PlacementKind::single_conv13: return "single_conv13";
    case PlacementKind::stacked_conv13: return "stacked_conv13";
    case PlacementKind::conv13_fm_prefix:
      return "conv13_fm" + std::to_string(fm_prefix);
    case PlacementKind::all_feature_maps: return "all_feature_maps";
    case PlacementKind::single_after: return "after:" + after;
  }
  return "?";
}

Placement parse_placement(const std::string& s) {
  Placement p;
  if (s == "none") {
    p.kind = PlacementKind::none;
  } else if (s == "single_conv13") {
    p.kind = PlacementKind::single_conv13;
  } else if (s == "stacked_conv13") {
    p.kind = PlacementKind::stacked_conv13;
  } else if (s == "all_feature_maps") {
    p.kind = PlacementKind::all_feature_maps;
  } else if (s.rfind("conv13_fm", 0) == 0) {
    p.kind = PlacementKind::conv13_fm_prefix;
    p.fm_prefix = std::stoi(s.substr(9));
    check(p.fm_prefix >= 1, "conv13_fm placement needs a prefix length >= 1");
  } else if (s.rfind("after:", 0) == 0) {
    p.kind = PlacementKind::single_after;
    p.after = s.substr(6);
    check(!p.after.empty(), "after: placement needs a layer name");
  } else {
    throw std::invalid_argument("unknown placement strategy: " + s);
  }
  return p;
}

int scale_channels(int base, NetworkPart part, double alpha) {
  double mult = alpha;
  if (part == NetworkPart::ssd) mult = 0.5 * alpha;
  if (part == NetworkPart::lstm) mult = 0.25 * alpha;
  int scaled = static_cast<int>(std::floor(base * mult + 0.5));
  return std::max(1, scaled);
}

const LayerDesc* ArchSpec::find(const std::string& name) const {
  for (const auto& l : layers)
    if (l.name == name) return &l;
  return nullptr;
}

namespace {

struct StackRow {
  std::string name;
  int raw_out;       // channels before width-multiplier scaling
  int stride;
  LayerKind kind;
  NetworkPart part;
};

struct FmRow {
  std::string name;
  int raw_mid;
  int raw_out;
};

// Whether a recurrent layer placed after `site` keeps its input width.
// The last two feature-map scales are never bottlenecked (their channel
// dimension is already very small).
bool bottleneck_exempt(const std::string& site, int n_fms, bool toy) {
  int keep = toy ? 1 : 2;
  for (int k = n_fms; k > n_fms - keep; --k)
    if (site == "FM" + std::to_string(k)) return true;
  return false;
}

}  // namespace

ArchSpec build_arch(const BuildOptions& opts) {
  check(opts.alpha > 0.0 && opts.alpha <= 1.0, "alpha must be in (0, 1]");
  check(opts.resolution % 32 == 0, "input resolution must be divisible by 32, got " +
                                       std::to_string(opts.resolution));
  check(opts.num_classes >= 1, "need at least one foreground class");

  std::vector<StackRow> stack;
  std::vector<FmRow> fms;
  if (!opts.toy) {
    stack.push_back({"Conv1", 32, 2, LayerKind::full_conv, NetworkPart::base});
    const int chans[] = {64, 128, 128, 256, 256, 512, 512, 512, 512, 512, 512, 1024};
    const int strides[] = {1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2};
    for (int i = 0; i < 12; ++i)
      stack.push_back({"Conv" + std::to_string(i + 2), chans[i], strides[i],
                       LayerKind::separable_conv, NetworkPart::base});
    fms = {{"FM1", 256, 512}, {"FM2", 128, 256}, {"FM3", 128, 256}, {"FM4", 64, 128}};
  } else {
    // Shortened desk-scale stack: Conv1..Conv7 plus two feature maps; the
    // Conv7 layer plays the Conv13 role for LSTM placement.
    stack.push_back({"Conv1", 8, 2, LayerKind::full_conv, NetworkPart::base});
    const int chans[] = {16, 32, 32, 64, 64, 64};
    const int strides[] = {1, 2, 1, 2, 1, 2};
    for (int i = 0; i < 6; ++i)
      stack.push_back({"Conv" + std::to_string(i + 2), chans[i], strides[i],
                       LayerKind::separable_conv, NetworkPart::base});
    fms = {{"FM1", 32, 64}, {"FM2", 16, 32}};
  }
  const std::string conv13 = opts.toy ? "Conv7" : "Conv13";
  const int n_fms = static_cast<int>(fms.size());

  // recurrent layers to insert: site name -> how many stacked
  std::vector<std::pair<std::string, int>> sites;
  const Placement& pl = opts.placement;
  switch (pl.kind) {
    case PlacementKind::none:
      break;
    case PlacementKind::single_conv13:
      sites.push_back({conv13, 1});
      break;
    case PlacementKind::stacked_conv13:
      sites.push_back({conv13, 2});
      break;
    case PlacementKind::conv13_fm_prefix:
      check(pl.fm_prefix <= n_fms, "feature-map prefix exceeds the stack");
      sites.push_back({conv13, 1});
      for (int k = 1; k <= pl.fm_prefix; ++k)
        sites.push_back({"FM" + std::to_string(k), 1});
      break;
    case PlacementKind::all_feature_maps:
      sites.push_back({conv13, 1});
      for (int k = 1; k <= n_fms; ++k) sites.push_back({"FM" + std::to_string(k), 1});
      break;
    case PlacementKind::single_after: {
      bool legal = pl.after == conv13 || pl.after.rfind("FM", 0) == 0;
      check(legal || opts.allow_early_placement,
            "recurrent placement after " + pl.after +
                " sits before the lowest-resolution maps; pass the early-placement "
                "override to build it anyway");
      sites.push_back({pl.after, 1});
      break;
    }
  }
  auto stacked_at = [&](const std::string& name) -> int {
    for (auto& [s, n] : sites)
      if (s == name) return n;
    return 0;
  };

  ArchSpec spec;
  spec.alpha = opts.alpha;
  spec.resolution = opts.resolution;
  spec.placement = pl.str();
  spec.toy = opts.toy;
  spec.num_classes = opts.num_classes;

  auto s_base = [&](int raw) { return scale_channels(raw, NetworkPart::base, opts.alpha); };
  auto s_ssd = [&](int raw) { return scale_channels(raw, NetworkPart::ssd, opts.alpha); };
  // Toy channel counts are already desk-scale; they take the plain multiplier.
  auto s_part = [&](int raw, NetworkPart part) {
    return opts.toy ? s_base(raw)
                    : (part == NetworkPart::ssd ? s_ssd(raw) : s_base(raw));
  };

  int cur = 3;
  auto push = [&](LayerDesc l) {
    spec.layers.push_back(std::move(l));
  };
  auto add_recurrent = [&](const std::string& site, int in_ch) -> int {
    int count = stacked_at(site);
    int chans = in_ch;
    for (int idx = 0; idx < count; ++idx) {
      LayerDesc l;
      l.name = site + "/lstm" + (idx ? std::to_string(idx + 1) : "");
      l.kind = opts.lstm_type;
      l.form = opts.form;
      l.kernel = 3;
      l.stride = 1;
      l.in_ch = chans;
      bool keep_width = opts.lstm_type != LayerKind::bottleneck_lstm ||
                        bottleneck_exempt(site, n_fms, opts.toy) || idx > 0;
      l.out_ch = keep_width            ? chans
                 : opts.lstm_channels > 0 ? opts.lstm_channels
                                          : scale_channels(chans, NetworkPart::lstm, 1.0);
      chans = l.out_ch;
      push(std::move(l));
    }
    return chans;
  };

  for (const auto& row : stack) {
    LayerDesc l;
    l.name = row.name;
    l.kind = row.kind;
    l.kernel = 3;
    l.stride = row.stride;
    l.in_ch = cur;
    l.out_ch = s_part(row.raw_out, row.part);
    cur = l.out_ch;
    push(std::move(l));
    cur = add_recurrent(row.name, cur);
  }

  struct Source {
    std::string layer;
    double scale;
  };
  std::vector<Source> sources;
  auto block_output = [&] { return spec.layers.back().name; };
  const int n_sources = 1 + n_fms;
  auto scale_for = [&](int idx) {
    const double lo = opts.toy ? 0.30 : 0.20, hi = opts.toy ? 0.85 : 0.95;
    return n_sources == 1 ? lo : lo + idx * (hi - lo) / (n_sources - 1);
  };
  sources.push_back({block_output(), scale_for(0)});

  for (int k = 0; k < n_fms; ++k) {
    const FmRow& fm = fms[k];
    LayerDesc reduce;
    reduce.name = fm.name + "_reduce";
    reduce.kind = LayerKind::full_conv;
    reduce.kernel = 1;
    reduce.stride = 1;
    reduce.in_ch = cur;
    reduce.out_ch = s_part(fm.raw_mid, NetworkPart::ssd);
    cur = reduce.out_ch;
    push(std::move(reduce));
    LayerDesc down;
    down.name = fm.name;
    down.kind = LayerKind::separable_conv;
    down.kernel = 3;
    down.stride = 2;
    down.in_ch = cur;
    down.out_ch = s_part(fm.raw_out, NetworkPart::ssd);
    cur = down.out_ch;
    push(std::move(down));
    cur = add_recurrent(fm.name, cur);
    sources.push_back({block_output(), scale_for(k + 1)});
  }

  const int a = spec.anchors_per_cell();
  for (const auto& src : sources) {
    LayerDesc head;
    head.name = "Head_" + src.layer.substr(0, src.layer.find('/'));
    head.kind = LayerKind::box_head;
    head.kernel = 3;
    head.stride = 1;
    head.input = src.layer;
    head.in_ch = spec.find(src.layer)->out_ch;
    head.out_ch = a * (spec.num_classes + 1 + 4);
    head.bias = true;
    head.anchor_scale = src.scale;
    push(std::move(head));
  }

  int expected_recurrent = 0;
  for (auto& [s, n] : sites) expected_recurrent += n;
  int actual_recurrent = 0;
  for (const auto& l : spec.layers)
    if (l.is_recurrent()) ++actual_recurrent;
  check(actual_recurrent == expected_recurrent,
        "invalid placement site: " + pl.str());

  // channel chain consistency
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& l = spec.layers[i];
    int expect;
    if (!l.input.empty()) {
      const LayerDesc* src = spec.find(l.input);
      check(src != nullptr, l.name + " references unknown input " + l.input);
      expect = src->out_ch;
    } else if (i == 0) {
      expect = 3;
    } else {
      expect = spec.layers[i - 1].out_ch;
    }
    check(l.in_ch == expect, "channel chain broken at " + l.name);
  }
  return spec;
}

std::string serialize_arch(const ArchSpec& spec) {
  std::ostringstream out;
  out << "TSL-ARCH 1\n";
  out << "alpha " << spec.alpha << "\n";
  out << "resolution " << spec.resolution << "\n";
  out << "placement " << spec.placement << "\n";
  out << "classes " << spec.num_classes << "\n";
  out << "toy " << (spec.toy ? 1 : 0) << "\n";
  out << "aspect_ratios";
  for (double r : spec.aspect_ratios) out << " " << r;
  out << "\n";
  for (const auto& l : spec.layers) {
    out << "layer " << l.name << " " << layer_kind_name(l.kind) << " " << l.kernel
        << " " << l.stride << " " << l.in_ch << "->" << l.out_ch;
    if (l.kind == LayerKind::bottleneck_lstm)
      out << " form=" << bottleneck_form_name(l.form);
    if (l.bias) out << " bias";
    if (!l.input.empty()) out << " input=" << l.input;
    if (l.anchor_scale > 0) out << " scale=" << l.anchor_scale;
    out << "\n";
  }
  return out.str();
}

ArchSpec parse_arch(const std::string& text) {
  std::istringstream in(text);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  check(magic == "TSL-ARCH" && version == 1, "not an architecture file");
  ArchSpec spec;
  spec.aspect_ratios.clear();
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "alpha") ls >> spec.alpha;
    else if (key == "resolution") ls >> spec.resolution;
    else if (key == "placement") ls >> spec.placement;
    else if (key == "classes") ls >> spec.num_classes;
    else if (key == "toy") { int t; ls >> t; spec.toy = t != 0; }
    else if (key == "aspect_ratios") {
      double r;
      while (ls >> r) spec.aspect_ratios.push_back(r);
    } else if (key == "layer") {
      LayerDesc l;
      std::string kind, chain;
      ls >> l.name >> kind >> l.kernel >> l.stride >> chain;
      l.kind = parse_layer_kind(kind);
      auto arrow = chain.find("->");
      check(arrow != std::string::npos, "bad channel chain: " + chain);
      l.in_ch = std::stoi(chain.substr(0, arrow));
      l.out_ch = std::stoi(chain.substr(arrow + 2));
      std::string tok;
      while (ls >> tok) {
        if (tok == "bias") l.bias = true;
        else if (tok.rfind("form=", 0) == 0) l.form = parse_bottleneck_form(tok.substr(5));
        else if (tok.rfind("input=", 0) == 0) l.input = tok.substr(6);
        else if (tok.rfind("scale=", 0) == 0) l.anchor_scale = std::stod(tok.substr(6));
        else throw std::invalid_argument("unknown layer attribute: " + tok);
      }
      spec.layers.push_back(std::move(l));
    } else {
      throw std::invalid_argument("unknown architecture key: " + key);
    }
  }
  if (spec.aspect_ratios.empty()) spec.aspect_ratios = {1.0, 2.0, 0.5};
  return spec;
}

void save_arch(const ArchSpec& spec, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "cannot write architecture file: " + path);
  out << serialize_arch(spec);
}

ArchSpec load_arch(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open architecture file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_arch(ss.str());
}

}  // namespace tsl
