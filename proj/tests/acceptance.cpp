// Acceptance run: one PASS/FAIL line per criterion. Criteria may be selected
// by number on the command line (e.g. `acceptance 1 2 5`); the default is all.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "cdon/checkpoint.hpp"
#include "cdon/grad_suite.hpp"
#include "cdon/report.hpp"
#include "cdon/train.hpp"
#include "oracles.hpp"

using namespace cdon;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

void report(const std::string& id, const std::string& title, const Verdict& v) {
  std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << v.detail
            << std::endl;
}

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fmt_sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// ---------------------------------------------------------------- 1

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const std::vector<GradSuiteResult> results = run_grad_suite();
  const double secs = seconds_since(t0);
  const std::set<std::string> required = {
      "conv2d",     "depthwise_conv2d",      "dense",               "sigmoid",
      "broadcast_mul", "psroi_pool",         "deformable_psroi_pool", "gate_forward_spatio",
      "gate_forward_channel", "detection_loss"};
  Verdict v;
  double worst = 0;
  std::set<std::string> seen;
  for (const GradSuiteResult& r : results) {
    seen.insert(r.op);
    worst = std::max(worst, static_cast<double>(r.report.max_rel_error));
    if (!r.report.passed || r.report.max_rel_error >= 1e-4 || r.report.checked == 0) {
      v.pass = false;
      v.detail += r.op + " failed; ";
    }
  }
  for (const std::string& op : required) {
    if (seen.count(op) == 0) {
      v.pass = false;
      v.detail += op + " missing; ";
    }
  }
  if (secs >= 60) v.pass = false;
  v.detail += std::to_string(results.size()) + " ops, max rel error " + fmt_sci(worst) + ", " +
              fmt(secs, 3) + " s";
  return v;
}

// ---------------------------------------------------------------- 2

RoI random_roi(std::mt19937_64& rng, real extent, real scale) {
  std::uniform_real_distribution<real> pos(0, extent * real(0.6));
  std::uniform_real_distribution<real> size(real(0.5), extent * real(0.6));
  const real x = pos(rng), y = pos(rng);
  return {{x / scale, y / scale, (x + size(rng)) / scale, (y + size(rng)) / scale}, scale};
}

Verdict reduction_identity() {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> extent(5, 12);
  const real scales[] = {1, real(0.5), real(0.25)};
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int k = 1 + 2 * (t % 3);
    const int h = extent(rng), w = extent(rng);
    const PSRoIMaps maps{oracle::random_tensor({1, 2 * k * k, h, w}, rng), k, 2};
    const std::vector<RoI> rois = {random_roi(rng, static_cast<real>(std::min(h, w)), scales[t % 3])};
    const OffsetField zero{Tensor4({1, 2, k, k}, 0), real(0.1)};
    const Tensor4 a = deformable_psroi_pool(maps, rois, zero).values;
    const Tensor4 b = psroi_pool(maps, rois).values;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i] - b[i])));
  }
  return {worst <= 1e-9, "100 instances, k in {1,3,5}, max |diff| " + fmt_sci(worst)};
}

// ---------------------------------------------------------------- 3

Box random_box(std::mt19937_64& rng, real extent) {
  std::uniform_real_distribution<real> u(0, extent), s(2, extent / 2);
  const real x = u(rng), y = u(rng);
  return {x, y, x + s(rng), y + s(rng)};
}

oracle::ImageCase random_image(std::mt19937_64& rng, const std::string& id, bool coarse) {
  std::uniform_real_distribution<real> pos(0, 60), size(8, 25), unit(0, 1);
  std::uniform_int_distribution<int> count(0, 3);
  oracle::ImageCase im;
  const int ng = count(rng), ni = count(rng) % 2;
  for (int i = 0; i < ng; ++i) {
    const real x = pos(rng), y = pos(rng), s = size(rng);
    im.gts.push_back({x, y, x + real(0.82) * s, y + 2 * s});
  }
  for (int i = 0; i < ni; ++i) {
    const real x = pos(rng), y = pos(rng), s = size(rng);
    im.ignored.push_back({x, y, x + s, y + s});
  }
  std::uniform_real_distribution<real> jitter(-3, 3);
  for (int i = 0; i < 5; ++i) {
    Box b;
    const int pick = static_cast<int>(unit(rng) * 3);
    if (pick == 0 && !im.gts.empty()) {
      const Box& g = im.gts[static_cast<std::size_t>(i) % im.gts.size()];
      b = {g.x1 + jitter(rng), g.y1 + jitter(rng), g.x2 + jitter(rng), g.y2 + jitter(rng)};
    } else if (pick == 1 && !im.ignored.empty()) {
      const Box& g = im.ignored[0];
      b = {g.x1 + jitter(rng), g.y1 + jitter(rng), g.x2 + jitter(rng), g.y2 + jitter(rng)};
    } else {
      const real x = pos(rng), y = pos(rng), s = size(rng);
      b = {x, y, x + s, y + 2 * s};
    }
    real score = unit(rng);
    if (coarse) score = std::round(score * 4) / 4;
    im.dets.push_back({id, b, score});
  }
  return im;
}

Verdict oracle_equivalence() {
  std::mt19937_64 rng(20240602);
  std::map<std::string, int> failures;
  std::uniform_int_distribution<int> small(1, 4), extent(4, 8), coin(0, 1);

  for (int t = 0; t < 100; ++t) {
    const int cin = small(rng), cout = small(rng), kh = 1 + 2 * coin(rng), kw = 1 + 2 * coin(rng);
    const int stride = 1 + coin(rng), pad = coin(rng) + coin(rng), dil = 1 + coin(rng);
    const int h = extent(rng) + 2, w = extent(rng) + 2;
    ConvParams p = ConvParams::zeros(cout, cin, kh, kw, stride, pad, dil);
    p.weight = oracle::random_tensor(p.weight.shape(), rng);
    p.bias = oracle::random_tensor(p.bias.shape(), rng);
    const Tensor4 x = oracle::random_tensor({1 + coin(rng), cin, h, w}, rng);
    const Tensor4 got = conv2d(x, p);
    const Tensor4 want = oracle::conv2d(x, p.weight, p.bias, stride, pad, dil);
    bool ok = got.shape() == want.shape();
    for (std::size_t i = 0; ok && i < got.size(); ++i) ok = std::abs(got[i] - want[i]) <= 1e-12;
    if (!ok) ++failures["conv2d"];
  }

  std::uniform_real_distribution<real> unit(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<Box> boxes;
    std::vector<real> scores;
    for (int i = 0; i < 20; ++i) {
      boxes.push_back(random_box(rng, 40));
      scores.push_back(t % 3 == 0 ? std::round(unit(rng) * 4) / 4 : unit(rng));
    }
    const real thresh = t % 2 == 0 ? real(0.5) : real(0.3);
    const std::vector<std::size_t> kept = nms(boxes, scores, thresh);
    if (std::set<std::size_t>(kept.begin(), kept.end()) != oracle::nms(boxes, scores, thresh)) {
      ++failures["nms"];
    }
  }

  for (int t = 0; t < 100; ++t) {
    const int k = 1 + 2 * (t % 3);
    const int h = extent(rng) + 3, w = extent(rng) + 3;
    const PSRoIMaps maps{oracle::random_tensor({1, 2 * k * k, h, w}, rng), k, 2};
    const std::vector<RoI> rois = {random_roi(rng, static_cast<real>(h), real(0.5)),
                                   random_roi(rng, static_cast<real>(h), 1)};
    const Tensor4 got = psroi_pool(maps, rois).values;
    const Tensor4 want = oracle::psroi(maps.maps, rois, k, 2);
    bool ok = true;
    for (std::size_t i = 0; i < got.size(); ++i) ok = ok && std::abs(got[i] - want[i]) <= 1e-12;
    if (!ok) ++failures["psroi_pool"];
  }

  for (int t = 0; t < 100; ++t) {
    const oracle::ImageCase im = random_image(rng, "x", t % 2 == 0);
    const ImageOutcome got = match_detections(im.dets, im.gts, im.ignored);
    const oracle::MatchCounts want = oracle::match(im.dets, im.gts, im.ignored, real(0.5));
    if (got.tp() != want.tp || got.fp() != want.fp || got.missed != want.missed) {
      ++failures["match_detections"];
    }
  }

  int curve_cases = 0;
  while (curve_cases < 100) {
    std::vector<oracle::ImageCase> images;
    std::vector<ImageOutcome> outcomes;
    long total_gt = 0;
    for (int i = 0; i < 4; ++i) {
      images.push_back(random_image(rng, "i" + std::to_string(i), curve_cases % 2 == 1));
      outcomes.push_back(match_detections(images.back().dets, images.back().gts, images.back().ignored));
      total_gt += static_cast<long>(images.back().gts.size());
    }
    if (total_gt == 0) continue;
    ++curve_cases;
    const EvalCurve got = fppi_mr_curve(outcomes);
    const std::vector<CurvePoint> want = oracle::curve(images, real(0.5));
    bool ok = got.points.size() == want.size();
    for (std::size_t i = 0; ok && i < want.size(); ++i) {
      ok = got.points[i].fppi == want[i].fppi && got.points[i].miss_rate == want[i].miss_rate;
    }
    if (!ok) ++failures["fppi_mr_curve"];
  }

  Verdict v;
  v.detail = "conv2d, nms, psroi_pool, match_detections, fppi_mr_curve x 100 instances each";
  for (const auto& [op, n] : failures) {
    v.pass = false;
    v.detail += "; " + op + " mismatched " + std::to_string(n);
  }
  return v;
}

// ---------------------------------------------------------------- 4

Annotation fixture(real h, real vis) {
  Annotation a;
  a.full = {0, 0, real(0.41) * h, h};
  a.visible = {0, 0, real(0.41) * h, vis * h};
  a.visibility = vis;
  return a;
}

bool evaluated_under(const Annotation& a, const SubsetSpec& spec) {
  const SubsetSplit s = filter_subset(std::span<const Annotation>(&a, 1), spec);
  return s.evaluated.size() == 1 && s.ignored.empty();
}

bool ignored_under(const Annotation& a, const SubsetSpec& spec) {
  const SubsetSplit s = filter_subset(std::span<const Annotation>(&a, 1), spec);
  return s.evaluated.empty() && s.ignored.size() == 1;
}

Verdict metric_fixtures() {
  const std::vector<CurvePoint> all_miss = {{0, 1}};
  std::vector<CurvePoint> constant;
  for (real f : {real(1e-3), real(1e-2), real(0.1), real(1), real(10)}) constant.push_back({f, real(0.2)});
  const real m_all = log_avg_miss_rate(all_miss);
  const real m_const = log_avg_miss_rate(constant);
  Verdict v;
  v.pass = std::abs(m_all - 100) <= 1e-9 && std::abs(m_const - 20) <= 1e-9;
  const bool f1 = evaluated_under(fixture(60, real(0.8)), SubsetSpec::reasonable());
  const bool f2 = ignored_under(fixture(60, real(0.5)), SubsetSpec::reasonable()) &&
                  evaluated_under(fixture(60, real(0.5)), SubsetSpec::occlusion());
  const bool f3 = ignored_under(fixture(10, 1), SubsetSpec::all());
  v.pass = v.pass && f1 && f2 && f3;
  v.detail = "all-miss " + fmt(m_all, 9) + "%, constant-0.2 " + fmt(m_const, 9) + "%, subset fixtures " +
             (f1 ? "ok" : "WRONG") + "/" + (f2 ? "ok" : "WRONG") + "/" + (f3 ? "ok" : "WRONG");
  return v;
}

// ---------------------------------------------------------------- 5

Verdict smooth_l1_fixture() {
  const real a = smooth_l1(real(0.5)), b = smooth_l1(1), c = smooth_l1(2);
  return {a == real(0.125) && b == real(0.5) && c == real(1.5),
          "f(0.5)=" + fmt(a, 17) + " f(1)=" + fmt(b, 17) + " f(2)=" + fmt(c, 17)};
}

// ---------------------------------------------------------------- 6-8

const std::vector<SubsetSpec>& subsets() {
  static const std::vector<SubsetSpec> s = {SubsetSpec::reasonable(), SubsetSpec::small(),
                                            SubsetSpec::occlusion()};
  return s;
}

struct RunOutcome {
  bool ok = false;
  std::string error;
  std::vector<TrainLogRow> log;
  std::vector<std::uint8_t> checkpoint;
  std::vector<real> mr;  // Reasonable, Small, Occlusion; NaN when undefined
  double train_secs = 0;
  double total_secs = 0;
};

std::vector<real> evaluate_all(Network& net, std::span<const Sample> val) {
  const std::vector<Detection> dets = run_detector(net, val);
  const std::vector<ImageRecord> records = records_of(val);
  std::vector<real> out;
  for (const SubsetSpec& s : subsets()) out.push_back(evaluate_named(records, dets, s).mr2());
  return out;
}

RunOutcome train_and_evaluate(const RunConfig& cfg, std::span<const Sample> train_set,
                              std::span<const Sample> val) {
  RunOutcome out;
  const auto t0 = Clock::now();
  try {
    TrainResult r = train(cfg, train_set);
    out.train_secs = seconds_since(t0);
    out.log = r.log;
    out.checkpoint = serialize(make_checkpoint(r.net, r.optim, cfg, r.steps));
    out.mr = evaluate_all(r.net, val);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.total_secs = seconds_since(t0);
  return out;
}

std::string mr_text(const std::vector<real>& mr) {
  std::string s;
  for (std::size_t i = 0; i < mr.size(); ++i) {
    s += (i ? " / " : "") + (std::isnan(mr[i]) ? std::string("n/a") : fmt(mr[i]));
  }
  return s;
}

struct Benchmark {
  RunConfig cfg;
  std::vector<Sample> train_set;
  std::vector<Sample> val;
  std::optional<RunOutcome> reference;
  std::vector<real> untrained;

  const RunOutcome& reference_run() {
    if (!reference) {
      reference = train_and_evaluate(cfg, train_set, val);
      std::cout << "  reference run: " << fmt(reference->train_secs, 1) << " s training, "
                << fmt(reference->total_secs, 1) << " s total" << std::endl;
    }
    return *reference;
  }

  RunOutcome variant(const std::string& name, const RunConfig& c) {
    RunOutcome r = train_and_evaluate(c, train_set, val);
    std::cout << "  variant " << name << ": MR " << mr_text(r.mr) << " (" << fmt(r.total_secs, 1)
              << " s)" << (r.ok ? "" : " error: " + r.error) << std::endl;
    return r;
  }
};

Verdict end_to_end(Benchmark& b) {
  Verdict v;
  const TrainConfig& t = b.cfg.train;
  if (t.steps != 500 || b.cfg.train_scenes != 50 || t.gate_kind != GateKind::channel ||
      t.squeeze_ratio != 2 || !t.use_deformable) {
    return {false, "reference config does not describe the required run"};
  }
  Network init = initial_network(t);
  b.untrained = evaluate_all(init, b.val);
  const RunOutcome& r = b.reference_run();
  if (!r.ok) return {false, "training failed: " + r.error};
  bool finite = true;
  for (const TrainLogRow& row : r.log) finite = finite && std::isfinite(row.total);
  const real first = mean_total(r.log, 0, 10);
  const real last = mean_total(r.log, r.log.size() - 10, r.log.size());
  const bool loss_ok = last <= real(0.5) * first;
  bool mr_ok = true;
  for (std::size_t i = 0; i < r.mr.size(); ++i) mr_ok = mr_ok && r.mr[i] < b.untrained[i];
  const bool time_ok = r.total_secs < 15 * 60;
  v.pass = finite && r.log.size() == 500 && loss_ok && mr_ok && time_ok;
  v.detail = "loss mean steps 1-10 " + fmt(first, 3) + " -> steps 491-500 " + fmt(last, 3) + " (" +
             fmt(100 * last / first, 1) + "%); MR Reasonable/Small/Occlusion untrained " +
             mr_text(b.untrained) + " -> trained " + mr_text(r.mr) + "; " + fmt(r.total_secs, 1) + " s";
  return v;
}

Verdict deformable_direction(Benchmark& b) {
  const RunOutcome& on = b.reference_run();
  RunConfig c = b.cfg;
  c.train.use_deformable = false;
  const RunOutcome off = b.variant("psroi", c);
  if (!on.ok || !off.ok) return {false, "a run failed"};
  const real a = on.mr[2], d = off.mr[2];
  return {a <= d, "Occlusion MR deformable " + fmt(a) + " vs psroi " + fmt(d)};
}

Verdict gate_direction(Benchmark& b) {
  const RunOutcome& channel = b.reference_run();
  RunConfig sc = b.cfg;
  sc.train.gate_kind = GateKind::spatio;
  const RunOutcome spatio = b.variant("spatio", sc);
  RunConfig nc = b.cfg;
  nc.train.gate_kind = GateKind::none;
  nc.train.taps = {5};
  const RunOutcome none = b.variant("none", nc);
  if (!channel.ok || !spatio.ok || !none.ok) return {false, "a run failed"};
  const real best = std::min(channel.mr[1], spatio.mr[1]);
  return {best <= none.mr[1], "Small MR channel " + fmt(channel.mr[1]) + ", spatio " +
                                  fmt(spatio.mr[1]) + " vs single deep layer " + fmt(none.mr[1])};
}

Verdict determinism(Benchmark& b) {
  const RunOutcome& first = b.reference_run();
  const RunOutcome second = b.variant("repeat", b.cfg);
  if (!first.ok || !second.ok) return {false, "a run failed"};
  const bool same_ckpt = first.checkpoint == second.checkpoint;
  bool same_mr = first.mr.size() == second.mr.size();
  for (std::size_t i = 0; same_mr && i < first.mr.size(); ++i) {
    same_mr = first.mr[i] == second.mr[i] || (std::isnan(first.mr[i]) && std::isnan(second.mr[i]));
  }
  return {same_ckpt && same_mr, std::string("checkpoints ") + (same_ckpt ? "identical" : "DIFFER") + " (" +
                                    std::to_string(first.checkpoint.size()) + " bytes), MR " +
                                    (same_mr ? "identical" : "DIFFER")};
}

// ---------------------------------------------------------------- 9

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CDON_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict checkpoint_format() {
  const fs::path dir = CDON_FIXTURE_DIR;
  const fs::path tmp = fs::temp_directory_path() / "cdon_acceptance_golden.ckpt";
  bool round_trip = false;
  std::string why;
  try {
    save_checkpoint(load_checkpoint((dir / "golden.ckpt").string()), tmp.string());
    round_trip = read_bytes(tmp) == read_bytes(dir / "golden.ckpt");
  } catch (const std::exception& e) {
    why = std::string(" (") + e.what() + ")";
  }
  fs::remove(tmp);
  const int golden = run_cli("inspect --ckpt " + (dir / "golden.ckpt").string());
  const int magic = run_cli("inspect --ckpt " + (dir / "bad_magic.ckpt").string());
  const int trunc = run_cli("inspect --ckpt " + (dir / "truncated.ckpt").string());
  return {round_trip && golden == 0 && magic == 2 && trunc == 2,
          std::string("golden round trip ") + (round_trip ? "bit-exact" : "DIFFERS" + why) +
              "; exit codes golden " + std::to_string(golden) + ", bad magic " + std::to_string(magic) +
              ", truncated " + std::to_string(trunc) + " (expected 0, 2, 2)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(argv[i]);
  auto want = [&](const std::string& id) {
    return wanted.empty() || wanted.count(id) != 0 || wanted.count(id.substr(0, 1)) != 0;
  };

  int failed = 0;
  auto run = [&](const std::string& id, const std::string& title, auto&& fn) {
    if (!want(id)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    report(id, title, v);
    if (!v.pass) ++failed;
  };

  run("1", "gradient suite", gradient_suite);
  run("2", "zero-offset reduction", reduction_identity);
  run("3", "oracle equivalence", oracle_equivalence);
  run("4", "metric fixtures", metric_fixtures);
  run("5", "smooth-L1 fixture", smooth_l1_fixture);

  if (want("6") || want("7a") || want("7b") || want("8")) {
    Benchmark bench;
    bench.cfg = RunConfig::load(std::string(CDON_SOURCE_DIR) + "/configs/synthetic.cfg");
    bench.train_set = generate_dataset(bench.cfg.scene, 0, bench.cfg.train_scenes);
    bench.val = generate_dataset(bench.cfg.scene, bench.cfg.val_first_index, bench.cfg.val_scenes);
    std::cout << "  benchmark: " << bench.train_set.size() << " training scenes, " << bench.val.size()
              << " validation scenes" << std::endl;
    run("6", "end-to-end desk run", [&] { return end_to_end(bench); });
    run("7a", "deformable vs psroi on Occlusion", [&] { return deformable_direction(bench); });
    run("7b", "gated multi-layer vs single layer on Small", [&] { return gate_direction(bench); });
    run("8", "determinism", [&] { return determinism(bench); });
  }

  run("9", "checkpoint format", checkpoint_format);

  std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
