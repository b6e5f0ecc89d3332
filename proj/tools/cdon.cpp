// Command-line harness: data generation, training, evaluation, ablation,
// gradient checks and plotting.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cdon/checkpoint.hpp"
#include "cdon/config.hpp"
#include "cdon/grad_suite.hpp"
#include "cdon/report.hpp"
#include "cdon/scene.hpp"
#include "cdon/train.hpp"

namespace fs = std::filesystem;
using namespace cdon;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::ofstream open_out(const std::string& path) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  return out;
}

int cmd_gen_data(const std::string& config, const std::string& out, int count, int first) {
  const RunConfig cfg = RunConfig::load(config);
  if (count < 1) throw ConfigError("gen-data: --count must be >= 1");
  const int written = write_dataset(cfg.scene, out, first, count);
  std::cout << "wrote " << written << " scenes to " << out << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              std::string log_path) {
  const RunConfig cfg = RunConfig::load(config);
  const std::vector<Sample> samples = load_dataset(data);
  if (log_path.empty()) log_path = out + ".log.csv";
  std::ofstream log = open_out(log_path);
  TrainOptions opt;
  opt.log = &log;
  opt.checkpoint_prefix = out;
  opt.nan_dump_path = out + ".nan_dump.txt";
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train(cfg, samples, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(make_checkpoint(result.net, result.optim, cfg, result.steps), out);
  std::cout << "trained " << result.steps << " steps in " << secs << " s ("
            << result.net.param_count() << " parameters); checkpoint " << out << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dets_path, const std::string& data,
             const std::string& subset, const std::string& out, const std::string& config,
             const std::string& dets_out, const std::string& gates_out) {
  const SubsetSpec spec = SubsetSpec::by_name(subset);
  std::vector<Detection> dets;
  std::vector<Sample> samples;
  std::vector<ImageRecord> images;
  if (!ckpt_path.empty()) {
    const Checkpoint ck = load_checkpoint(ckpt_path);
    if (!config.empty()) {
      const std::uint64_t want = RunConfig::load(config).hash();
      if (ck.at("meta/config_hash").to_u64() != want) {
        throw ConfigError("eval: checkpoint config hash does not match " + config);
      }
    }
    RestoredRun run = restore(ck);
    samples = load_dataset(data);
    std::vector<Tensor4> gates;
    dets = run_detector(run.net, samples, gates_out.empty() ? nullptr : &gates);
    images = records_of(samples);
    if (!gates_out.empty()) {
      std::ofstream g = open_out(gates_out);
      write_gate_csv(g, run.net.taps, gates, 0);
    }
  } else {
    std::ifstream in(dets_path);
    if (!in) throw FormatError("cannot read " + dets_path);
    dets = read_detections(in);
    std::ifstream ann(fs::path(data) / "annotations.jsonl");
    if (!ann) throw FormatError("no annotations.jsonl under " + data);
    images = read_annotations(ann);
  }
  if (!dets_out.empty()) {
    std::ofstream d = open_out(dets_out);
    write_detections(d, dets);
  }
  const SubsetResult r = evaluate_named(images, dets, spec);
  std::ofstream csv = open_out(out);
  if (r.curve) {
    write_curve_csv(csv, *r.curve);
  } else {
    csv << "fppi,miss_rate\n";
  }
  std::cout << summary_line(r) << '\n';
  return kExitOk;
}

int cmd_ablate(const std::string& axis_name, const std::string& config, const std::string& out) {
  const AblationAxis axis = parse_axis(axis_name);
  const RunConfig base = RunConfig::load(config);
  const std::vector<Variant> variants = ablation_variants(base, axis);
  fs::create_directories(out);
  const std::vector<Sample> train_set = generate_dataset(base.scene, 0, base.train_scenes);
  const std::vector<Sample> val_set =
      generate_dataset(base.scene, base.val_first_index, base.val_scenes);
  const std::vector<ImageRecord> val_records = records_of(val_set);

  ComparisonTable table;
  const std::vector<SubsetSpec> subsets = {SubsetSpec::reasonable(), SubsetSpec::small(),
                                           SubsetSpec::occlusion()};
  for (const SubsetSpec& s : subsets) table.subsets.push_back(s.name);
  for (const Variant& v : variants) {
    std::string slug = v.name;
    for (char& c : slug) {
      if (c == '=') c = '_';
    }
    std::ofstream log = open_out((fs::path(out) / (slug + ".log.csv")).string());
    TrainOptions opt;
    opt.log = &log;
    opt.nan_dump_path = (fs::path(out) / (slug + ".nan_dump.txt")).string();
    TrainResult result = train(v.config, train_set, opt);
    save_checkpoint(make_checkpoint(result.net, result.optim, v.config, result.steps),
                    (fs::path(out) / (slug + ".ckpt")).string());
    const std::vector<Detection> dets = run_detector(result.net, val_set);
    std::vector<SubsetResult> row;
    for (const SubsetSpec& s : subsets) {
      row.push_back(evaluate_named(val_records, dets, s));
      if (row.back().curve) {
        std::ofstream c = open_out((fs::path(out) / (slug + "." + s.name + ".csv")).string());
        write_curve_csv(c, *row.back().curve);
      }
    }
    table.variants.push_back(v.name);
    table.cells.push_back(std::move(row));
    std::cout << v.name << " done\n";
  }
  std::ofstream csv = open_out((fs::path(out) / "table.csv").string());
  write_table_csv(csv, table);
  write_table_text(std::cout, table);
  return kExitOk;
}

int cmd_grad_check(const std::string& op) {
  bool all = true;
  for (const GradSuiteResult& r : run_grad_suite(op)) {
    const GradCheckReport& rep = r.report;
    std::cout << (rep.passed ? "PASS " : "FAIL ") << r.op << " max_rel_error=" << rep.max_rel_error
              << " checked=" << rep.checked << " skipped=" << rep.skipped << '\n';
    all = all && rep.passed;
  }
  return all ? kExitOk : kExitNumeric;
}

int cmd_plot(const std::vector<std::string>& curves, const std::string& out) {
  std::vector<LabelledCurve> loaded;
  for (const std::string& path : curves) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read " + path);
    loaded.push_back({fs::path(path).stem().string(), read_curve_csv(in)});
  }
  std::ofstream svg = open_out(out);
  write_curves_svg(svg, loaded);
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  std::cout << "version " << ck.version << ", " << ck.records.size() << " records\n";
  for (const Record& r : ck.records) {
    std::cout << r.name << " dtype=" << static_cast<int>(r.dtype) << " dims=";
    for (std::size_t i = 0; i < r.dims.size(); ++i) std::cout << (i ? "x" : "") << r.dims[i];
    std::cout << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled gated / deformable pedestrian detector harness"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt, dets, subset = "Reasonable", log, axis, op, dets_out, gates;
  int count = 0, first = 0;
  std::vector<std::string> curves;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate synthetic scenes");
  gen->add_option("--config", config, "Config file")->required();
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Number of scenes")->required();
  gen->add_option("--first", first, "Index of the first scene");

  CLI::App* tr = app.add_subcommand("train", "Train the detector");
  tr->add_option("--config", config, "Config file")->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint path")->required();
  tr->add_option("--log", log, "Loss log CSV (default <out>.log.csv)");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate a checkpoint or detection file");
  auto* ckpt_opt = ev->add_option("--ckpt", ckpt, "Checkpoint");
  auto* dets_opt = ev->add_option("--dets", dets, "Detections JSONL instead of a checkpoint");
  ckpt_opt->excludes(dets_opt);
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--subset", subset, "Reasonable, Small, Occlusion, All, Medium, Heavy");
  ev->add_option("--out", out, "Curve CSV")->required();
  ev->add_option("--config", config, "Config the checkpoint must match");
  ev->add_option("--write-dets", dets_out, "Write detections JSONL");
  ev->add_option("--gates", gates, "Write first-RoI gate values of the first image");

  CLI::App* ab = app.add_subcommand("ablate", "Train and compare variants along one axis");
  ab->add_option("--axis", axis, "squeeze_ratio, gate_kind or deformable")->required();
  ab->add_option("--config", config, "Base config")->required();
  ab->add_option("--out", out, "Output directory")->required();

  CLI::App* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  gc->add_option("--op", op, "Single op to check");

  CLI::App* pl = app.add_subcommand("plot", "Plot miss-rate curves to SVG");
  pl->add_option("--curves", curves, "Curve CSV files")->required();
  pl->add_option("--out", out, "SVG path")->required();

  CLI::App* in = app.add_subcommand("inspect", "List checkpoint records");
  in->add_option("--ckpt", ckpt, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(config, out, count, first);
    if (*tr) return cmd_train(config, data, out, log);
    if (*ev) {
      if (ckpt.empty() && dets.empty()) throw UsageError("eval: give --ckpt or --dets");
      return cmd_eval(ckpt, dets, data, subset, out, config, dets_out, gates);
    }
    if (*ab) return cmd_ablate(axis, config, out);
    if (*gc) return cmd_grad_check(op);
    if (*pl) return cmd_plot(curves, out);
    if (*in) return cmd_inspect(ckpt);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
