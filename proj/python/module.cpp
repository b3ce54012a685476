#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tsl/cost_model.hpp"
#include "tsl/train.hpp"

namespace py = pybind11;
using namespace tsl;

namespace {

BuildOptions make_options(double alpha, int resolution, const std::string& placement,
                          const std::string& lstm_type, const std::string& form,
                          bool toy, int lstm_channels) {
  BuildOptions o;
  o.alpha = alpha;
  o.resolution = resolution;
  o.placement = parse_placement(placement);
  if (lstm_type == "lstm") o.lstm_type = LayerKind::conv_lstm;
  else if (lstm_type == "gru") o.lstm_type = LayerKind::conv_gru;
  else if (lstm_type == "averaging") o.lstm_type = LayerKind::averaging;
  else if (lstm_type == "bottleneck") o.lstm_type = LayerKind::bottleneck_lstm;
  else throw std::invalid_argument("unknown lstm type: " + lstm_type);
  o.form = parse_bottleneck_form(form);
  o.toy = toy;
  o.num_classes = toy ? 3 : 30;
  o.lstm_channels = lstm_channels;
  return o;
}

py::dict report_dict(const CostReport& r) {
  py::dict out;
  out["total_params"] = r.total_params;
  out["total_mac_eq4"] = r.total_mac_eq4;
  out["total_mac_table1"] = r.total_mac_table1;
  py::list layers;
  for (const LayerCost& l : r.layers) {
    py::dict d;
    d["name"] = l.name;
    d["params"] = l.params;
    d["mac_eq4"] = l.mac_eq4;
    d["mac_table1"] = l.mac_table1;
    layers.append(d);
  }
  out["layers"] = layers;
  out["notes"] = r.notes;
  return out;
}

py::array_t<float> frames_array(const VideoSequence& v) {
  const int t = static_cast<int>(v.frames.size());
  const Shape s = v.frames.front().dims;
  py::array_t<float> out({t, s.h, s.w, s.c});
  float* dst = out.mutable_data();
  for (const Tensor& f : v.frames) {
    std::copy(f.data.begin(), f.data.end(), dst);
    dst += f.data.size();
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_tsl, m) {
  m.doc() = "temporally-aware mobile detection core";

  m.def("lstm_cost", &lstm_cost, py::arg("m"), py::arg("n"), py::arg("df"),
        py::arg("dk") = 3);
  m.def("gru_cost", &gru_cost, py::arg("m"), py::arg("n"), py::arg("df"),
        py::arg("dk") = 3);
  m.def(
      "bottleneck_cost",
      [](std::int64_t mm, std::int64_t n, std::int64_t df, std::int64_t dk,
         const std::string& form) {
        return bottleneck_cost(mm, n, df, dk,
                               form == "table1" ? BottleneckCostForm::table1
                                                : BottleneckCostForm::eq4);
      },
      py::arg("m"), py::arg("n"), py::arg("df"), py::arg("dk") = 3,
      py::arg("form") = "eq4");
  m.def(
      "crossover",
      [](std::int64_t mm, std::int64_t n, const std::string& vs) {
        Crossover c = crossover_check(
            mm, n, 3, vs == "gru" ? CrossoverBaseline::gru : CrossoverBaseline::lstm);
        if (c == Crossover::equal) return "equal";
        return c == Crossover::lstm_cheaper ? "baseline_cheaper" : "bottleneck_cheaper";
      },
      py::arg("m"), py::arg("n"), py::arg("vs") = "lstm");

  m.def(
      "cost_report",
      [](double alpha, int resolution, const std::string& placement,
         const std::string& lstm_type, const std::string& form, bool toy,
         int lstm_channels) {
        BuildOptions o = make_options(alpha, resolution, placement, lstm_type, form,
                                      toy, lstm_channels);
        ArchSpec spec = build_arch(o);
        return report_dict(model_report(spec, spec.resolution));
      },
      py::arg("alpha") = 1.0, py::arg("resolution") = 320,
      py::arg("placement") = "all_feature_maps", py::arg("lstm_type") = "bottleneck",
      py::arg("form") = "table1", py::arg("toy") = false, py::arg("lstm_channels") = 0);

  m.def(
      "arch_text",
      [](double alpha, int resolution, const std::string& placement,
         const std::string& lstm_type, const std::string& form, bool toy,
         int lstm_channels) {
        return serialize_arch(build_arch(make_options(
            alpha, resolution, placement, lstm_type, form, toy, lstm_channels)));
      },
      py::arg("alpha") = 1.0, py::arg("resolution") = 320,
      py::arg("placement") = "all_feature_maps", py::arg("lstm_type") = "bottleneck",
      py::arg("form") = "table1", py::arg("toy") = false, py::arg("lstm_channels") = 0);

  m.def(
      "generate_video",
      [](std::uint64_t seed, int resolution, int length, int num_objects,
         int num_classes, double speed) {
        VideoParams p;
        p.resolution = resolution;
        p.length = length;
        p.num_objects = num_objects;
        p.num_classes = num_classes;
        p.speed = speed;
        VideoSequence v = generate_video(seed, p);
        py::list gt;
        for (const FrameGroundTruth& fg : v.gt) {
          py::list frame;
          for (const GroundTruthBox& b : fg)
            frame.append(py::make_tuple(b.cls, b.box.cx, b.box.cy, b.box.w, b.box.h));
          gt.append(frame);
        }
        return py::make_tuple(frames_array(v), gt);
      },
      py::arg("seed"), py::arg("resolution") = 64, py::arg("length") = 40,
      py::arg("num_objects") = 2, py::arg("num_classes") = 3, py::arg("speed") = 2.0);

  m.def("occlusion_protocol",
        [](std::uint64_t seed, int n_train, int n_eval, int s1, int s2) {
          ProtocolResult r = occlusion_protocol(seed, n_train, n_eval, s1, s2);
          py::dict out;
          out["p"] = r.ps;
          out["baseline_map"] = r.baseline_map;
          out["lstm_map"] = r.lstm_map;
          return out;
        },
        py::arg("seed") = 1, py::arg("n_train") = 60, py::arg("n_eval") = 12,
        py::arg("stage1_steps") = 1500, py::arg("stage2_steps") = 1000);
}
