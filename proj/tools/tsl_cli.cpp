#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsl/cost_model.hpp"
#include "tsl/gradcheck.hpp"
#include "tsl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tsl;

namespace {

constexpr const char* kVersion = "0.1.0";

LayerKind parse_lstm_type(const std::string& s) {
  if (s == "lstm") return LayerKind::conv_lstm;
  if (s == "gru") return LayerKind::conv_gru;
  if (s == "bottleneck") return LayerKind::bottleneck_lstm;
  if (s == "averaging") return LayerKind::averaging;
  throw std::invalid_argument("unknown lstm type: " + s);
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n') c = ';';
  return s;
}

// Every command writes its artifacts plus a manifest under one directory.
struct RunDir {
  fs::path root;
  json manifest;

  RunDir(const std::string& out, const std::string& cmd, std::uint64_t seed) {
    root = out.empty() ? fs::path("runs") / (cmd + "_seed" + std::to_string(seed))
                       : fs::path(out);
    fs::create_directories(root);
    manifest["command"] = cmd;
    manifest["seed"] = seed;
    manifest["version"] = kVersion;
    manifest["artifacts"] = json::array();
  }

  fs::path write(const std::string& name, const std::string& text) {
    fs::path p = root / name;
    fs::create_directories(p.parent_path());
    std::ofstream(p) << text;
    manifest["artifacts"].push_back(name);
    return p;
  }

  void finish(const json& config) {
    manifest["config"] = config;
    std::ostringstream echo;
    for (auto& [k, v] : config.items()) echo << k << " " << v.dump() << "\n";
    write("config", echo.str());
    std::ofstream(root / "manifest.json") << manifest.dump(2) << "\n";
    std::cout << "run dir: " << root.string() << "\n";
  }
};

struct BuildFlags {
  double alpha{1.0};
  int resolution{320};
  std::string placement{"single_conv13"};
  std::string lstm_type{"bottleneck"};
  std::string form{"table1"};
  bool toy{false};
  int lstm_channels{0};

  void attach(CLI::App* app) {
    app->add_option("--alpha", alpha, "width multiplier");
    app->add_option("--resolution", resolution, "input resolution");
    app->add_option("--placement", placement,
                    "none|single_conv13|stacked_conv13|conv13_fmK|all_feature_maps|after:NAME");
    app->add_option("--lstm-type", lstm_type)
        ->check(CLI::IsMember({"lstm", "gru", "bottleneck", "averaging"}));
    app->add_option("--bottleneck-form", form)->check(CLI::IsMember({"table1", "eq4"}));
    app->add_flag("--toy", toy, "64x64 3-class toy stack");
    app->add_option("--lstm-channels", lstm_channels, "override cell width (0 = 0.25x rule)");
  }

  BuildOptions options() const {
    BuildOptions o;
    o.alpha = alpha;
    o.resolution = toy && resolution == 320 ? 64 : resolution;
    o.placement = parse_placement(placement);
    o.lstm_type = parse_lstm_type(lstm_type);
    o.form = parse_bottleneck_form(form);
    o.toy = toy;
    o.num_classes = toy ? 3 : 30;
    o.lstm_channels = lstm_channels;
    return o;
  }

  json config() const {
    return {{"alpha", alpha},         {"resolution", resolution},
            {"placement", placement}, {"lstm_type", lstm_type},
            {"bottleneck_form", form}, {"toy", toy},
            {"lstm_channels", lstm_channels}};
  }
};

std::string format_report(const CostReport& r, const std::string& fmt) {
  if (fmt == "csv") return r.to_csv();
  if (fmt == "json") return r.to_json();
  return r.to_table();
}

Dataset toy_eval_dataset(int n, std::uint64_t seed) {
  VideoParams p;
  p.resolution = 64;
  p.length = 40;
  p.num_objects = 2;
  p.num_classes = 3;
  p.speed = 2.0;
  p.jitter = 0.5;
  p.blankout_p = 0.15;
  return make_dataset(n, p, seed);
}

Dataset toy_train_dataset(int n, std::uint64_t seed) {
  Dataset d = toy_eval_dataset(0, seed);
  VideoParams p;
  p.resolution = 64;
  p.length = 40;
  p.num_objects = 2;
  p.num_classes = 3;
  p.speed = 2.0;
  p.jitter = 0.5;
  p.blankout_p = 0.15;
  p.pixel_noise = 0.04;
  return make_dataset(n, p, seed);
}

int verify_main() {
  int failures = 0;
  auto report = [&](const std::string& name, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "PASS " : "FAIL ") << name;
    if (!detail.empty()) std::cout << "  (" << detail << ")";
    std::cout << "\n";
    if (!ok) ++failures;
  };

  // Published parameter counts, alpha = 1 and 0.5.
  auto near = [](double a, double b, double tol) { return std::abs(a - b) <= tol * b; };
  auto cell_params = [](LayerKind k, int m, int n) {
    LayerDesc d;
    d.kind = k;
    d.in_ch = m;
    d.out_ch = n;
    return double(layer_params(d));
  };
  report("params_alpha1",
         near(cell_params(LayerKind::conv_lstm, 1024, 1024), 8.46e6, 0.01) &&
             near(cell_params(LayerKind::conv_gru, 1024, 1024), 6.35e6, 0.01) &&
             near(cell_params(LayerKind::bottleneck_lstm, 1024, 256), 0.601e6, 0.01));
  report("params_alpha05",
         near(cell_params(LayerKind::conv_lstm, 512, 512), 2.13e6, 0.01) &&
             near(cell_params(LayerKind::conv_gru, 512, 512), 1.60e6, 0.01) &&
             near(cell_params(LayerKind::bottleneck_lstm, 512, 128), 0.153e6, 0.01));
  report("mac_alpha1", near(double(lstm_cost(1024, 1024, 10)), 840e6, 0.015) &&
                           near(double(gru_cost(1024, 1024, 10)), 632e6, 0.015));
  report("mac_alpha05", near(double(lstm_cost(512, 512, 8)), 135e6, 0.015) &&
                            near(double(gru_cost(512, 512, 8)), 102e6, 0.015));

  bool cross_ok = true;
  for (std::int64_t n = 4; n <= 1024 && cross_ok; n += 4) {
    if (n % 3 == 0)
      cross_ok = crossover_check(n / 3, n) == Crossover::equal &&
                 crossover_check(n / 3 + 1, n) != Crossover::equal;
    cross_ok = cross_ok &&
               crossover_check(n, n, 3, CrossoverBaseline::gru) == Crossover::equal &&
               crossover_check(n + 1, n, 3, CrossoverBaseline::gru) != Crossover::equal;
  }
  report("crossover_identities", cross_ok);

  // Gradient spot checks: one full conv, one separable conv, each cell step.
  std::mt19937 rng(7);
  auto randt = [&](Shape s) {
    std::normal_distribution<double> d(0.0, 0.5);
    Tensor64 t(s);
    for (auto& v : t.data) v = d(rng);
    return t;
  };
  auto fd_check = [&](const std::string& name,
                      const std::function<int(Tape<double>&, const std::vector<int>&)>& build,
                      std::vector<Shape> shapes) {
    double worst = std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt < 16; ++attempt) {
      std::vector<Tensor64> ins;
      for (Shape s : shapes) ins.push_back(randt(s));
      Tape<double> tp;
      std::vector<int> refs;
      for (auto& t : ins) refs.push_back(tp.input(t, true));
      int out = build(tp, refs);
      if (tp.kink_distance() < 1e-3) continue;  // too close to a relu kink
      Tensor64 r = randt(tp.value(out).dims);
      int loss = tp.sum(tp.hadamard(out, tp.constant(r)));
      tp.backward(loss);
      worst = 0.0;
      for (std::size_t i = 0; i < ins.size(); ++i) {
        Tensor64 analytic(ins[i].dims);
        analytic.data = tp.grad(refs[i]);
        auto f = [&](const Tensor64& x) {
          Tape<double> t2;
          std::vector<int> rf;
          for (std::size_t j = 0; j < ins.size(); ++j)
            rf.push_back(t2.input(j == i ? x : ins[j], false));
          int o2 = build(t2, rf);
          return t2.value(t2.sum(t2.hadamard(o2, t2.constant(r)))).data[0];
        };
        worst = std::max(worst, finite_diff_check(f, ins[i], analytic, 1e-5));
      }
      break;
    }
    report("grad_" + name, worst < 1e-4, "max rel err " + std::to_string(worst));
  };

  fd_check("full_conv",
           [](Tape<double>& tp, const std::vector<int>& in) {
             return tp.relu(tp.conv2d(in[0], in[1], KernelKind::full, 1, Padding::same));
           },
           {Shape{1, 4, 4, 3}, Shape{3, 3, 3, 2}});
  fd_check("separable_conv",
           [](Tape<double>& tp, const std::vector<int>& in) {
             return depthwise_separable(tp, in[0], in[1], in[2], 2);
           },
           {Shape{1, 5, 5, 3}, Shape{3, 3, 3, 1}, Shape{1, 1, 3, 4}});
  fd_check("bottleneck_lstm_step",
           [](Tape<double>& tp, const std::vector<int>& in) {
             BottleneckLstmRefs w;
             w.b = {in[2], in[3], -1};
             w.gates = {in[4], in[5], -1};
             auto s = bottleneck_lstm_step(tp, in[0], {in[1], in[6]}, w);
             return tp.concat_channels(s.h, s.c);
           },
           {Shape{1, 3, 3, 4}, Shape{1, 3, 3, 2}, Shape{3, 3, 4, 1}, Shape{1, 1, 6, 2},
            Shape{3, 3, 2, 1}, Shape{1, 1, 2, 8}, Shape{1, 3, 3, 2}});
  fd_check("conv_lstm_step",
           [](Tape<double>& tp, const std::vector<int>& in) {
             ConvLstmRefs w;
             w.f = {in[2], in[3], -1};
             w.i = {in[4], in[5], -1};
             w.o = {in[6], in[7], -1};
             w.c = {in[8], in[9], -1};
             auto s = conv_lstm_step(tp, in[0], {in[1], in[10]}, w);
             return tp.concat_channels(s.h, s.c);
           },
           {Shape{1, 3, 3, 3}, Shape{1, 3, 3, 2}, Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2},
            Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2}, Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2},
            Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2}, Shape{1, 3, 3, 2}});
  fd_check("conv_gru_step",
           [](Tape<double>& tp, const std::vector<int>& in) {
             ConvGruRefs w;
             w.z = {in[2], in[3], -1};
             w.r = {in[4], in[5], -1};
             w.h = {in[6], in[7], -1};
             return conv_gru_step(tp, in[0], {in[1], -1}, w).h;
           },
           {Shape{1, 3, 3, 3}, Shape{1, 3, 3, 2}, Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2},
            Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2}, Shape{3, 3, 5, 1}, Shape{1, 1, 5, 2}});

  std::cout << (failures == 0 ? "VERIFY OK" : "VERIFY FAILED") << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"temporally-aware mobile detection toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker cap (1 guarantees reproducibility)")
      ->check(CLI::PositiveNumber);

  BuildFlags cost_flags, arch_flags, train_flags;
  std::string out_dir, format = "table";
  std::uint64_t seed = 1;

  auto* cost = app.add_subcommand("cost-report", "analytic params/MAC report");
  cost_flags.placement = "all_feature_maps";
  cost_flags.attach(cost);
  cost->add_option("--format", format)->check(CLI::IsMember({"table", "csv", "json"}));
  cost->add_option("--out", out_dir, "run directory (default runs/<cmd>_seed<seed>)");
  cost->add_option("--seed", seed);

  auto* barch = app.add_subcommand("build-arch", "emit an architecture file");
  arch_flags.attach(barch);
  barch->add_option("--out", out_dir);
  barch->add_option("--seed", seed);

  auto* train = app.add_subcommand("train", "two-stage toy training");
  train_flags.toy = true;
  train_flags.attach(train);
  TrainConfig tc;
  std::string init_ckpt, freeze = "Conv7";
  int n_videos = 60;
  train->add_option("--steps", tc.steps);
  train->add_option("--batch", tc.batch);
  train->add_option("--lr", tc.lr);
  train->add_option("--unroll", tc.unroll);
  train->add_option("--seed", seed);
  train->add_option("--videos", n_videos);
  train->add_option("--init", init_ckpt, "stage-1 checkpoint (required with recurrent layers)");
  train->add_option("--freeze-through", freeze);
  train->add_option("--out", out_dir);

  auto* eval = app.add_subcommand("eval", "mAP of a checkpoint on toy videos");
  std::string arch_path, ckpt_path;
  double occ_p = 0.0;
  int n_eval = 12;
  eval->add_option("--arch", arch_path)->required();
  eval->add_option("--checkpoint", ckpt_path)->required();
  eval->add_option("--occlusion-p", occ_p)->check(CLI::Range(0.0, 1.0));
  eval->add_option("--videos", n_eval);
  eval->add_option("--seed", seed);
  eval->add_option("--out", out_dir);

  auto* ablate = app.add_subcommand("ablate", "variant grid at toy scale");
  std::string kind = "layer_type";
  TrainConfig ac;
  ac.steps = 120;
  ac.batch = 2;
  int ab_train = 20, ab_eval = 6;
  ablate->add_option("--kind", kind)
      ->check(CLI::IsMember(
          {"placement", "layer_type", "bottleneck_dim", "multi_placement", "occlusion"}));
  ablate->add_option("--steps", ac.steps);
  ablate->add_option("--batch", ac.batch);
  ablate->add_option("--unroll", ac.unroll);
  ablate->add_option("--seed", seed);
  ablate->add_option("--videos", ab_train);
  ablate->add_option("--eval-videos", ab_eval);
  ablate->add_option("--out", out_dir);

  auto* occl = app.add_subcommand("occlude-eval",
                                  "baseline vs Bottleneck-LSTM across occlusion levels");
  int s1 = 1500, s2 = 1000, oc_train = 60, oc_eval = 12;
  occl->add_option("--seed", seed);
  occl->add_option("--stage1-steps", s1);
  occl->add_option("--stage2-steps", s2);
  occl->add_option("--videos", oc_train);
  occl->add_option("--eval-videos", oc_eval);
  occl->add_option("--out", out_dir);

  auto* verify = app.add_subcommand("verify", "invariant suite (costs, crossovers, gradients)");

  CLI11_PARSE(app, argc, argv);

  try {
    seed = resolve_seed(seed);
    tc.seed = ac.seed = seed;

    if (*cost) {
      ArchSpec spec = build_arch(cost_flags.options());
      CostReport r = model_report(spec, spec.resolution);
      std::cout << format_report(r, format);
      RunDir run(out_dir, "cost-report", seed);
      run.write(format == "json" ? "report.json" : "report.csv",
                format == "json" ? r.to_json() : r.to_csv());
      json cfg = cost_flags.config();
      cfg["format"] = format;
      run.finish(cfg);
    } else if (*barch) {
      ArchSpec spec = build_arch(arch_flags.options());
      RunDir run(out_dir, "build-arch", seed);
      run.write("arch.txt", serialize_arch(spec));
      CostReport r = model_report(spec, spec.resolution);
      std::cout << spec.layers.size() << " layers, " << r.total_params << " params, "
                << r.total_mac_table1 << " MAC\n";
      run.finish(arch_flags.config());
    } else if (*train) {
      if (!train_flags.toy)
        throw std::invalid_argument("training supports --toy scale only");
      ModelInstance model = compose(build_arch(train_flags.options()), seed);
      Dataset data = toy_train_dataset(n_videos, seed * 101);
      tc.seed = seed;
      TrainResult res;
      if (model.m() == 0) {
        res = train_stage1(model, data, tc);
      } else {
        if (init_ckpt.empty())
          throw std::invalid_argument(
              "recurrent placement requires --init <stage-1 checkpoint>");
        tc.freeze_through = freeze;
        res = train_stage2(model, load_checkpoint(init_ckpt), data, tc);
      }
      Dataset ev = toy_eval_dataset(n_eval, seed * 101 + 7);
      double map = evaluate_model(model, ev, 0.0, seed + 50);
      RunDir run(out_dir, "train", seed);
      fs::create_directories(run.root / "checkpoints");
      save_checkpoint(model.params,
                      (run.root / ("checkpoints/step_" + std::to_string(tc.steps))).string());
      run.manifest["artifacts"].push_back("checkpoints/step_" + std::to_string(tc.steps));
      std::ostringstream metrics;
      metrics << "step,loss,map\n";
      for (std::size_t i = 0; i < res.losses.size(); ++i)
        metrics << (i + 1) << "," << res.losses[i] << ","
                << (i + 1 == res.losses.size() ? std::to_string(map) : "") << "\n";
      run.write("metrics.csv", metrics.str());
      run.write("arch.txt", serialize_arch(model.spec));
      json cfg = train_flags.config();
      cfg["steps"] = tc.steps;
      cfg["batch"] = tc.batch;
      cfg["lr"] = tc.lr;
      cfg["unroll"] = tc.unroll;
      cfg["videos"] = n_videos;
      cfg["init"] = init_ckpt;
      cfg["freeze_through"] = model.m() == 0 ? "" : freeze;
      std::cout << "final loss " << res.losses.back() << ", clean mAP " << map << "\n";
      run.finish(cfg);
    } else if (*eval) {
      ModelInstance model = compose(load_arch(arch_path), seed);
      ParamStore ckpt = load_checkpoint(ckpt_path);
      TransferReport rep = transfer_params(ckpt, model);
      if (!rep.missing.empty() || !rep.shape_mismatch.empty())
        throw std::invalid_argument("checkpoint does not cover the arch: " +
                                    one_line(rep.str()));
      if (!model.spec.toy) throw std::invalid_argument("eval supports --toy archs only");
      Dataset ev = toy_eval_dataset(n_eval, seed * 101 + 7);
      double map = evaluate_model(model, ev, occ_p, seed + 50);
      std::cout << "mAP " << map << " at occlusion p=" << occ_p << "\n";
      RunDir run(out_dir, "eval", seed);
      std::ostringstream m;
      m << "occlusion_p,map\n" << occ_p << "," << map << "\n";
      run.write("metrics.csv", m.str());
      run.finish({{"arch", arch_path},
                  {"checkpoint", ckpt_path},
                  {"occlusion_p", occ_p},
                  {"videos", n_eval}});
    } else if (*ablate) {
      std::vector<AblationRow> rows = run_ablation(kind, ac, ab_train, ab_eval);
      std::string csv = ablation_csv(rows);
      std::cout << csv;
      RunDir run(out_dir, "ablate", seed);
      run.write("ablation.csv", csv);
      run.finish({{"kind", kind},
                  {"steps", ac.steps},
                  {"batch", ac.batch},
                  {"unroll", ac.unroll},
                  {"videos", ab_train},
                  {"eval_videos", ab_eval}});
    } else if (*occl) {
      ProtocolResult r = occlusion_protocol(seed, oc_train, oc_eval, s1, s2);
      std::ostringstream csv;
      csv << "p,baseline_map,lstm_map,margin\n";
      for (std::size_t i = 0; i < r.ps.size(); ++i) {
        double margin = r.lstm_map[i] - r.baseline_map[i];
        csv << r.ps[i] << "," << r.baseline_map[i] << "," << r.lstm_map[i] << ","
            << margin << "\n";
        std::printf("p=%.2f  baseline=%.4f  lstm=%.4f  margin=%+.4f\n", r.ps[i],
                    r.baseline_map[i], r.lstm_map[i], margin);
      }
      RunDir run(out_dir, "occlude-eval", seed);
      run.write("occlusion.csv", csv.str());
      run.finish({{"stage1_steps", s1},
                  {"stage2_steps", s2},
                  {"videos", oc_train},
                  {"eval_videos", oc_eval}});
    } else if (*verify) {
      return verify_main();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  }
  return 0;
}
