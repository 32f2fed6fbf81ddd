// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any fails.
//
//   acceptance [--workdir DIR] [--checkpoint PATH] [--pilot]
//
// --checkpoint reuses an existing toy checkpoint instead of training one
// (criterion 9 is then reported as SKIP). --pilot prints the identical-input
// SSIM distribution used to fix the end-to-end threshold and exits.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flexfuse/checkpoint.hpp"
#include "flexfuse/corpus.hpp"
#include "flexfuse/imageio.hpp"
#include "flexfuse/metrics.hpp"
#include "flexfuse/oracles/checks.hpp"
#include "flexfuse/sampler.hpp"
#include "flexfuse/train.hpp"

namespace fs = std::filesystem;
using namespace flexfuse;

namespace {

// Fixed from the 40-seed pilot recorded in pilot.md.
constexpr double kSsimThreshold = 0.60;
constexpr std::uint64_t kSeed = 20240601;

struct Line {
  int id;
  std::string name;
  bool passed;
  bool skipped;
  std::string detail;
};

std::vector<Line> g_lines;

void report(int id, std::string name, bool passed, const std::string& detail, bool skipped = false) {
  std::cerr << "criterion " << id << " finished" << std::endl;
  g_lines.push_back({id, std::move(name), passed, skipped, detail});
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

std::string fixed(double v, int digits = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string summary(const oracle::CheckResult& r, const std::string& statistic = "worst error") {
  std::string s = std::to_string(r.trials) + " checks, " + statistic + " " + sci(r.worst) + ", " + fixed(r.seconds) + " s";
  if (!r.passed) s += " | " + r.detail;
  return s;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

Grid<double> unit_range(const NormalizedImage& n) {
  Grid<double> g(n.height(), n.width());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (static_cast<double>(n.grid()[i]) + 1.0) / 2.0;
  return g;
}

NoiseSchedule toy_schedule() { return make_schedule(ScheduleKind::scaled_linear, 100); }

// ---- criterion 9 -----------------------------------------------------------------

std::optional<Checkpoint> train_toy(const fs::path& workdir) {
  const auto corpus = synthetic_corpus(256, 16, 7);
  const TrainConfig cfg;  // 2000 steps, seed 0
  const double cpu0 = cpu_seconds();
  const auto wall0 = std::chrono::steady_clock::now();
  TrainResult res;
  try {
    res = train(cfg, corpus, DfmConfig::desk(), toy_schedule());
  } catch (const std::exception& e) {
    report(9, "training smoke", false, std::string("training threw: ") + e.what());
    return std::nullopt;
  }
  const double cpu = cpu_seconds() - cpu0;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  save_checkpoint(res.checkpoint, workdir / "toy.ffz");
  write_loss_csv(res.losses, workdir / "loss.csv");

  const std::size_t n = std::min<std::size_t>(100, res.losses.size());
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    first += res.losses[i].loss;
    last += res.losses[res.losses.size() - 1 - i].loss;
  }
  first /= static_cast<double>(n);
  last /= static_cast<double>(n);
  const bool ok = n == 100 && last < 0.5 * first && cpu < 600.0;
  report(9, "training smoke", ok,
         "first-100 mean " + fixed(first, 4) + ", last-100 mean " + fixed(last, 4) + " (ratio " +
             fixed(last / first, 3) + "), " + fixed(cpu, 1) + " s CPU / " + fixed(wall, 1) + " s wall");
  return std::move(res.checkpoint);
}

// ---- criterion 10 ----------------------------------------------------------------

FusionResult fuse_pair(const Checkpoint& ck, const NoiseSchedule& sched, const NormalizedImage& a,
                       const NormalizedImage& b, std::uint64_t seed) {
  return fuse(FusionRun{SourceStack{a, b, std::nullopt}, sched, &ck.params, EMConfig{}, seed, false});
}

double identical_input_ssim(const Checkpoint& ck, const NoiseSchedule& sched, const Grid<float>& img,
                            std::uint64_t seed) {
  const NormalizedImage a(img);
  return metrics::ssim(unit_range(fuse_pair(ck, sched, a, a, seed).fused), unit_range(a));
}

void end_to_end(const Checkpoint& ck) {
  const NoiseSchedule sched = ck.noise_schedule();
  const auto images = synthetic_corpus(20, 16, 2025);
  const auto t0 = std::chrono::steady_clock::now();

  std::size_t ssim_pass = 0, cc_pass = 0;
  double ssim_min = 1.0;
  std::ostringstream cc_detail;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::uint64_t seed = 1000 + i;
    const double s = identical_input_ssim(ck, sched, images[i], seed);
    ssim_min = std::min(ssim_min, s);
    ssim_pass += s >= kSsimThreshold;

    // Complementary halves: img1 keeps the top half of C, img2 the bottom half; the rest is black.
    const Grid<float>& c = images[10 + i];
    Grid<float> top = c, bottom = c;
    for (std::size_t r = 0; r < c.rows(); ++r)
      for (std::size_t col = 0; col < c.cols(); ++col) (r < c.rows() / 2 ? bottom : top)(r, col) = -1.0f;
    const NormalizedImage composite(c), i1(top), i2(bottom);
    const Grid<double> cu = unit_range(composite);
    const double cc_f = metrics::correlation(unit_range(fuse_pair(ck, sched, i1, i2, seed).fused), cu);
    const double cc_src = std::max(metrics::correlation(unit_range(i1), cu), metrics::correlation(unit_range(i2), cu));
    cc_pass += cc_f >= cc_src;
    if (cc_f < cc_src) cc_detail << " seed " << seed << ": " << fixed(cc_f, 3) << " < " << fixed(cc_src, 3) << ";";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = ssim_pass >= 9 && cc_pass >= 9;
  report(10, "end-to-end fusion", ok,
         "SSIM >= " + fixed(kSsimThreshold) + " on " + std::to_string(ssim_pass) + "/10 (min " + fixed(ssim_min, 3) +
             "), CC(fused,C) >= max source CC on " + std::to_string(cc_pass) + "/10, " + fixed(secs, 1) + " s" +
             cc_detail.str());
}

void pilot(const Checkpoint& ck) {
  const NoiseSchedule sched = ck.noise_schedule();
  const auto images = synthetic_corpus(40, 16, 99);
  std::vector<double> values;
  for (std::size_t i = 0; i < images.size(); ++i) {
    values.push_back(identical_input_ssim(ck, sched, images[i], i));
    std::cout << "seed " << std::setw(2) << i << "  SSIM " << fixed(values.back(), 4) << '\n';
  }
  std::sort(values.begin(), values.end());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  std::cout << "min " << fixed(values.front(), 4) << "  p10 " << fixed(values[values.size() / 10], 4) << "  median "
            << fixed(values[values.size() / 2], 4) << "  mean " << fixed(mean, 4) << "  max "
            << fixed(values.back(), 4) << '\n';
  std::cout << "at or above 0.70: " << std::count_if(values.begin(), values.end(), [](double v) { return v >= 0.7; })
            << "/" << values.size() << ", at or above " << fixed(kSsimThreshold) << ": "
            << std::count_if(values.begin(), values.end(), [](double v) { return v >= kSsimThreshold; }) << "/"
            << values.size() << '\n';
}

// ---- criterion 12 ----------------------------------------------------------------

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism(const fs::path& workdir, const fs::path& ckpt_path) {
#ifdef FLEXFUSE_TOOL_PATH
  const fs::path tool = FLEXFUSE_TOOL_PATH;
  const auto images = synthetic_corpus(2, 16, 4242);
  for (int i = 0; i < 2; ++i)
    save_image(denormalize(NormalizedImage(images[i])), workdir / ("det_src" + std::to_string(i) + ".png"));

  const auto run_fuse = [&](const std::string& out) {
    const std::string cmd = quote(tool) + " fuse " + quote(workdir / "det_src0.png") + " " +
                            quote(workdir / "det_src1.png") + " --ckpt " + quote(ckpt_path) + " --seed 77 -o " +
                            quote(workdir / out) + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  const int rc1 = run_fuse("det_a.png"), rc2 = run_fuse("det_b.png");
  const auto a = slurp(workdir / "det_a.png"), b = slurp(workdir / "det_b.png");
  const bool identical = rc1 == 0 && rc2 == 0 && !a.empty() && a == b;

  const auto t0 = std::chrono::steady_clock::now();
  const std::string st = quote(tool) + " selftest > " + quote(workdir / "selftest.log") + " 2>&1";
  const int rc = std::system(st.c_str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = identical && rc == 0 && secs < 300.0;
  report(12, "determinism and selftest", ok,
         std::string("fuse twice: ") + (identical ? "byte-identical" : "DIFFERENT or failed") + " (" +
             std::to_string(a.size()) + " bytes); selftest exit " + std::to_string(rc) + " in " + fixed(secs, 1) +
             " s");
#else
  (void)workdir;
  (void)ckpt_path;
  report(12, "determinism and selftest", false, "built without the flexfuse tool", true);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  fs::path workdir = "acceptance_work";
  std::optional<fs::path> reuse;
  bool pilot_mode = false;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else if (arg == "--checkpoint" && i + 1 < argc) {
      reuse = argv[++i];
    } else if (arg == "--pilot") {
      pilot_mode = true;
    } else {
      std::cerr << "usage: acceptance [--workdir DIR] [--checkpoint PATH] [--pilot]\n";
      return 1;
    }
  }
  fs::create_directories(workdir);

  if (pilot_mode) {
    pilot(reuse ? load_checkpoint(*reuse) : *train_toy(workdir));
    return 0;
  }

  {
    const double cpu0 = cpu_seconds();
    const auto r = oracle::check_fft_solver(100, {8, 16}, kSeed, 1e-8);
    const double cpu = cpu_seconds() - cpu0;
    report(1, "FFT solver vs dense solve", r.passed && cpu < 10.0, summary(r));
  }
  {
    const auto r = oracle::check_subproblems(100, 8, kSeed + 1, 1e-10);
    report(2, "sub-problem optimality", r.passed, summary(r));
  }
  {
    const auto r = oracle::check_monotonicity(100, 8, kSeed + 2, 1e-9);
    report(3, "splitting monotonicity", r.passed, summary(r));
  }

  // Criterion 4 runs on the trained checkpoint, so train first.
  std::optional<Checkpoint> ckpt;
  fs::path ckpt_path = workdir / "toy.ffz";
  if (reuse) {
    ckpt = load_checkpoint(*reuse);
    ckpt_path = *reuse;
  }

  {
    const auto r = oracle::check_zoh(50, kSeed + 5, 1e-6, 1e-10);
    report(5, "ZOH vs ODE integration", r.passed, summary(r));
  }
  {
    const auto r = oracle::check_scan_convolution(64, kSeed + 6, 1e-5);
    report(6, "scan vs convolution", r.passed, summary(r));
  }
  {
    const auto r = oracle::check_gradients(kSeed + 7, 3);
    report(7, "gradient checks", r.passed, summary(r, "worst error/tolerance"));
  }
  {
    const auto r = oracle::check_perfect_inversion(100, kSeed + 8, 1e-5, 1e-3);
    report(8, "perfect-oracle inversion", r.passed, summary(r));
  }
  {
    const auto r = oracle::check_metrics(50, 16, kSeed + 11, 1e-6);
    report(11, "metrics vs naive references", r.passed, summary(r));
  }

  if (reuse)
    report(9, "training smoke", false, "checkpoint supplied with --checkpoint; training not run", true);
  else
    ckpt = train_toy(workdir);

  if (ckpt) {
    const auto r = oracle::check_degeneracy(ckpt->params, ckpt->noise_schedule(), 10, 16, kSeed + 4);
    report(4, "modality degeneracy", r.passed, summary(r, "differing pixels"));
    end_to_end(*ckpt);
    determinism(workdir, ckpt_path);
  } else {
    for (int id : {4, 10, 12}) report(id, "needs the toy checkpoint", false, "training failed");
  }

  std::sort(g_lines.begin(), g_lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
  std::size_t passed = 0, failed = 0, skipped = 0;
  for (const auto& l : g_lines) {
    std::cout << "[" << (l.skipped ? "SKIP" : (l.passed ? "PASS" : "FAIL")) << "] " << std::setw(2) << l.id << "  "
              << std::left << std::setw(28) << l.name << std::right << "  " << l.detail << '\n';
    (l.skipped ? skipped : (l.passed ? passed : failed))++;
  }
  std::cout << passed << " passed, " << failed << " failed, " << skipped << " skipped\n";
  return failed ? 1 : 0;
}
