// segpost: scene generation, suppression, inference, verification and
// timing from the command line.
//
// Exit status: 0 ok, 1 verification failure, 2 bad input.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segpost/bench.hpp"
#include "segpost/io.hpp"
#include "segpost/suppression.hpp"
#include "segpost/verify.hpp"

namespace fs = std::filesystem;
using namespace segpost;

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kBadInput = 2;

struct SceneFlags {
  SceneSpec spec;
  std::string shape = "ellipse";

  void add(CLI::App* app) {
    app->add_option("--height", spec.height, "Image height in pixels")->capture_default_str();
    app->add_option("--width", spec.width, "Image width in pixels")->capture_default_str();
    app->add_option("--instances", spec.num_instances, "Base instances")->capture_default_str();
    app->add_option("--duplicates", spec.num_duplicates, "Jittered copies per instance")
        ->capture_default_str();
    app->add_option("--shape", shape, "Shape kind")
        ->check(CLI::IsMember({"rectangle", "ellipse"}))
        ->capture_default_str();
    app->add_option("--score-noise", spec.score_noise, "Duplicate score noise std")
        ->capture_default_str();
    app->add_option("--categories", spec.num_categories, "Number of categories")
        ->capture_default_str();
    app->add_option("--seed", spec.seed, "Scene seed")->capture_default_str();
  }

  SceneSpec get() const {
    SceneSpec s = spec;
    s.shape = shape == "rectangle" ? ShapeKind::kRectangle : ShapeKind::kEllipse;
    return s;
  }
};

struct SuppressFlags {
  std::string method = "matrix";
  std::string decay = "gauss";
  double sigma = 0.5;
  double iou_threshold = 0.5;
  double score_threshold = 0.05;
  std::size_t top_k = 100;
  bool class_agnostic = false;

  void add(CLI::App* app, bool with_method = true) {
    if (with_method)
      app->add_option("--method", method, "Suppression method")
          ->check(CLI::IsMember({"hard", "soft", "fast", "matrix"}))
          ->capture_default_str();
    app->add_option("--decay", decay, "Decay function")
        ->check(CLI::IsMember({"linear", "gauss"}))
        ->capture_default_str();
    app->add_option("--sigma", sigma, "Gaussian decay sigma")->capture_default_str();
    app->add_option("--iou-threshold", iou_threshold, "Hard/Fast IoU threshold")
        ->capture_default_str();
    app->add_option("--score-threshold", score_threshold, "Final score threshold")
        ->capture_default_str();
    app->add_option("--top-k", top_k, "Maximum detections kept")->capture_default_str();
    app->add_flag("--class-agnostic", class_agnostic, "Suppress across categories");
  }

  DecayFn decay_fn() const {
    return decay == "linear" ? DecayFn::linear() : DecayFn::gaussian(sigma);
  }

  SuppressionConfig config(std::size_t threads) const {
    SuppressionConfig c;
    c.method = parse_method(method);
    c.decay = decay_fn();
    c.iou_threshold = iou_threshold;
    c.score_threshold = score_threshold;
    c.top_k = top_k;
    c.class_agnostic = class_agnostic;
    c.threads = threads;
    c.validate();
    return c;
  }
};

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw MalformedInput("cannot open '" + path + "' for reading");
  return in;
}

// Writes to `path`, or stdout when empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MalformedInput("cannot open '" + path + "' for writing");
  out << text;
}

MaskSet load_mask_set(const std::string& path) {
  if (path == "-") return read_mask_set(std::cin);
  auto in = open_in(path);
  return read_mask_set(in);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

std::string result_table(const MaskSet& set, const SuppressionResult& r) {
  std::ostringstream s;
  s << std::left << std::setw(8) << "index" << std::setw(12) << "score" << std::setw(10)
    << "category" << "box\n";
  for (std::size_t k = 0; k < r.size(); ++k) {
    const auto& m = set.instances[r.kept_indices[k]];
    const Box b = mask_to_box(m.mask);
    s << std::setw(8) << r.kept_indices[k] << std::setw(12) << fmt(r.updated_scores[k], 6)
      << std::setw(10) << m.category << b.x_min << ' ' << b.y_min << ' ' << b.x_max << ' '
      << b.y_max << '\n';
  }
  return s.str();
}

HeadScene load_head_dir(const std::string& dir, std::uint64_t fusion_seed, bool kernel_3x3) {
  auto load = [&](const std::string& name) {
    auto in = open_in((fs::path(dir) / name).string(), std::ios::binary);
    return read_tensor(in);
  };
  HeadScene s;
  for (std::size_t l = 0;; ++l) {
    const auto p = fs::path(dir) / ("level" + std::to_string(l) + ".tensor");
    if (!fs::exists(p)) break;
    s.pyramid.levels.push_back(to_feature_map(load(p.filename().string())));
  }
  if (s.pyramid.levels.empty()) throw MalformedInput("no level0.tensor in '" + dir + "'");
  s.category = to_category_grid(load("category.tensor"));
  const Tensor kt = load("kernel.tensor");
  if (kt.shape.size() != 3) throw MalformedInput("kernel tensor must be 3-d");
  const std::size_t d = kt.shape[2];
  // E is what the fusion produces: D for 1x1 kernels, D / 9 for 3x3.
  if (kernel_3x3 && d % 9 != 0) throw MalformedInput("3x3 kernel dim must be a multiple of 9");
  const std::size_t e = kernel_3x3 ? d / 9 : d;
  s.pyramid.weights = FusionWeights::seeded(s.pyramid.levels.size(),
                                            s.pyramid.levels[0].channels(), e, fusion_seed);
  s.kernels = to_kernel_grid(kt, e);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-mask post-processing: Matrix NMS and baselines, dynamic-kernel "
               "mask assembly, pyramid fusion, losses, oracle verification and timing."};
  app.require_subcommand(1);
  std::size_t threads = default_threads();
  app.add_option("--threads", threads,
                 std::string("Worker threads (default from ") + kThreadsEnv + ")")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // gen
  auto* gen = app.add_subcommand("gen", "Generate a synthetic mask-set JSON scene");
  SceneFlags gen_scene_flags;
  gen_scene_flags.add(gen);
  std::string gen_out;
  gen->add_option("-o,--output", gen_out, "Output file (default stdout)");

  // suppress
  auto* sup = app.add_subcommand("suppress", "Suppress a mask-set JSON document");
  std::string sup_in, sup_out, sup_format = "json";
  SuppressFlags sup_flags;
  sup->add_option("input", sup_in, "Mask-set JSON ('-' for stdin)")->required();
  sup_flags.add(sup);
  sup->add_option("--format", sup_format, "Output format")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();
  sup->add_option("-o,--output", sup_out, "Output file (default stdout)");

  // bench
  auto* bench = app.add_subcommand("bench", "Time the suppression methods on one scene");
  SceneFlags bench_scene_flags;
  bench_scene_flags.spec.num_instances = 100;
  bench_scene_flags.add(bench);
  std::string bench_in, bench_format = "table";
  std::vector<std::string> bench_methods{"hard", "soft", "fast", "matrix"};
  SuppressFlags bench_flags;
  std::size_t repeats = 20;
  bench->add_option("--input", bench_in, "Mask-set JSON instead of a generated scene");
  bench->add_option("--method", bench_methods, "Methods to time (repeatable)")
      ->check(CLI::IsMember({"hard", "soft", "fast", "matrix"}))
      ->capture_default_str();
  bench_flags.add(bench, false);
  bench->add_option("--repeats", repeats, "Timed repeats per method (>= 3)")
      ->capture_default_str();
  bench->add_option("--format", bench_format, "Report format")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();

  // verify
  auto* ver = app.add_subcommand("verify", "Run the randomized oracle cross-checks");
  std::size_t ver_trials = 200;
  std::uint64_t ver_seed = 2024;
  std::string ver_format = "table";
  ver->add_option("--trials", ver_trials, "Random instances per suite")->capture_default_str();
  ver->add_option("--seed", ver_seed, "Suite seed")->capture_default_str();
  ver->add_option("--format", ver_format, "Report format")
      ->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();

  // gen-head
  auto* gh = app.add_subcommand("gen-head", "Write a synthetic head scene as tensor files");
  HeadSpec gh_spec;
  std::string gh_dir;
  gh->add_option("dir", gh_dir, "Output directory")->required();
  gh->add_option("--seed", gh_spec.seed, "Scene seed")->capture_default_str();
  gh->add_option("--size", gh_spec.height, "Level-0 feature size (square)")
      ->capture_default_str();
  gh->add_option("--levels", gh_spec.num_levels, "Pyramid levels")->capture_default_str();
  gh->add_option("--grid", gh_spec.grid_size, "Grid size S")->capture_default_str();
  gh->add_option("--classes", gh_spec.num_classes, "Classes")->capture_default_str();
  gh->add_option("--objects", gh_spec.num_objects, "Objects")->capture_default_str();
  gh->add_flag("--kernel-3x3", gh_spec.kernel_3x3, "Predict 3x3 kernels");

  // infer
  auto* inf = app.add_subcommand(
      "infer", "Fuse, assemble and suppress a head scene (seeded or from tensor files)");
  HeadSpec inf_spec;
  std::string inf_dir, inf_out;
  std::uint64_t fusion_seed = 0;
  SuppressFlags inf_flags;
  inf->add_option("--input-dir", inf_dir, "Directory written by gen-head");
  inf->add_option("--fusion-seed", fusion_seed, "Fusion weight seed for --input-dir")
      ->capture_default_str();
  inf->add_option("--seed", inf_spec.seed, "Scene seed")->capture_default_str();
  inf->add_option("--size", inf_spec.height, "Level-0 feature size (square)")
      ->capture_default_str();
  inf->add_option("--levels", inf_spec.num_levels, "Pyramid levels")->capture_default_str();
  inf->add_option("--grid", inf_spec.grid_size, "Grid size S")->capture_default_str();
  inf->add_option("--classes", inf_spec.num_classes, "Classes")->capture_default_str();
  inf->add_option("--objects", inf_spec.num_objects, "Objects")->capture_default_str();
  inf->add_flag("--kernel-3x3", inf_spec.kernel_3x3, "Predict 3x3 kernels");
  inf_flags.add(inf);
  inf->add_option("-o,--output", inf_out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  try {
    if (*gen) {
      MaskSet set;
      const SceneSpec spec = gen_scene_flags.get();
      set.height = spec.height;
      set.width = spec.width;
      set.instances = gen_scene(spec);
      emit(gen_out, mask_set_to_json(set).dump() + "\n");
    } else if (*sup) {
      const MaskSet set = load_mask_set(sup_in);
      const auto result = suppress(set.instances, sup_flags.config(threads));
      emit(sup_out, sup_format == "json" ? result_to_json(set, result).dump() + "\n"
                                         : result_table(set, result));
    } else if (*bench) {
      std::vector<ScoredMask> scene;
      if (!bench_in.empty())
        scene = load_mask_set(bench_in).instances;
      else
        scene = gen_scene(bench_scene_flags.get());
      BenchOptions opt;
      opt.methods.clear();
      for (const auto& m : bench_methods) opt.methods.push_back(parse_method(m));
      opt.repeats = repeats;
      opt.decay = bench_flags.decay_fn();
      opt.iou_threshold = bench_flags.iou_threshold;
      opt.score_threshold = bench_flags.score_threshold;
      // Single-threaded numbers are always reported; a second row set is
      // added when more threads are requested.
      std::vector<std::size_t> thread_counts{1};
      if (threads > 1) thread_counts.push_back(threads);
      json rows = json::array();
      std::ostringstream table;
      table << std::left << std::setw(8) << "method" << std::setw(8) << "threads"
            << std::setw(7) << "N" << std::setw(14) << "iou_ms" << std::setw(16)
            << "suppress_ms" << std::setw(7) << "kept" << "checksum\n";
      for (const std::size_t t : thread_counts) {
        opt.threads = t;
        for (const auto& rep : run_bench(scene, opt)) {
          rows.push_back({{"method", rep.method},
                          {"threads", t},
                          {"n", rep.n},
                          {"iou_matrix_ms", rep.iou_matrix_ms},
                          {"suppression_ms", rep.suppression_ms},
                          {"kept", rep.kept},
                          {"checksum", rep.checksum}});
          std::ostringstream cs;
          cs << std::hex << std::setw(16) << std::setfill('0') << rep.checksum;
          table << std::setw(8) << rep.method << std::setw(8) << t << std::setw(7) << rep.n
                << std::setw(14) << fmt(rep.iou_matrix_ms) << std::setw(16)
                << fmt(rep.suppression_ms) << std::setw(7) << rep.kept << cs.str() << '\n';
        }
      }
      emit("", bench_format == "json" ? json{{"reports", rows}}.dump(2) + "\n" : table.str());
    } else if (*ver) {
      const auto suites = verify::run_all(ver_trials, ver_seed);
      bool ok = true;
      json rows = json::array();
      std::ostringstream table;
      for (const auto& s : suites) {
        ok = ok && s.passed;
        rows.push_back({{"suite", s.name},
                        {"passed", s.passed},
                        {"checked", s.checked},
                        {"worst_error", s.worst},
                        {"detail", s.detail}});
        table << (s.passed ? "PASS " : "FAIL ") << s.name << " (" << s.checked
              << " instances";
        if (s.worst > 0.0) table << ", worst error " << std::scientific << std::setprecision(2)
                                 << s.worst << std::defaultfloat;
        table << ")";
        if (!s.passed) table << ": " << s.detail;
        table << '\n';
      }
      emit("", ver_format == "json" ? json{{"passed", ok}, {"suites", rows}}.dump(2) + "\n"
                                    : table.str());
      if (!ok) return kVerifyFailed;
    } else if (*gh) {
      gh_spec.width = gh_spec.height;
      const HeadScene scene = gen_head_scene(gh_spec);
      fs::create_directories(gh_dir);
      auto save = [&](const std::string& name, const Tensor& t) {
        std::ofstream out(fs::path(gh_dir) / name, std::ios::binary);
        if (!out) throw MalformedInput("cannot write into '" + gh_dir + "'");
        write_tensor(out, t);
      };
      for (std::size_t l = 0; l < scene.pyramid.levels.size(); ++l)
        save("level" + std::to_string(l) + ".tensor", to_tensor(scene.pyramid.levels[l]));
      save("kernel.tensor", to_tensor(scene.kernels));
      save("category.tensor", to_tensor(scene.category));
    } else if (*inf) {
      HeadScene scene;
      if (!inf_dir.empty()) {
        scene = load_head_dir(inf_dir, fusion_seed, inf_spec.kernel_3x3);
      } else {
        inf_spec.width = inf_spec.height;
        scene = gen_head_scene(inf_spec);
      }
      PipelineConfig cfg;
      cfg.assemble.threads = threads;
      cfg.suppression = inf_flags.config(threads);
      const auto out = inference_pipeline(scene.category, scene.kernels, scene.pyramid, cfg);
      const auto& base = scene.pyramid.levels[0];
      emit(inf_out, instances_to_json(out, base.height(), base.width()).dump() + "\n");
    }
  } catch (const VerificationFailure& e) {
    std::cerr << "segpost: verification failed: " << e.what() << '\n';
    return kVerifyFailed;
  } catch (const std::exception& e) {
    std::cerr << "segpost: " << e.what() << '\n';
    return kBadInput;
  }
  return kOk;
}
