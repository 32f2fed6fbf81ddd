#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "flexfuse/checkpoint.hpp"
#include "flexfuse/corpus.hpp"
#include "flexfuse/error.hpp"
#include "flexfuse/imageio.hpp"
#include "flexfuse/keyvalue.hpp"
#include "flexfuse/metrics.hpp"
#include "flexfuse/oracles/selftest.hpp"
#include "flexfuse/sampler.hpp"
#include "flexfuse/train.hpp"

namespace flexfuse::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Values from --config fill every option the command line left unset.
void apply_config_file(CLI::App& cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path);
  std::stringstream text;
  text << in.rdbuf();
  for (const auto& [key, value] : parse_key_values(text.str())) {
    if (key == "config") throw UsageError("config file may not name another config file");
    CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (!opt) throw UsageError("unknown key '" + key + "' in " + path);
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// ---- train -------------------------------------------------------------------

struct TrainOptions {
  std::string config;
  std::string data;
  std::size_t synthetic_count = 256;
  std::size_t synthetic_size = 16;
  std::uint64_t synthetic_seed = 7;
  std::string output;
  std::string loss_csv;
  TrainConfig train;
  std::string preset = "desk";
  std::size_t patch = 0, dim = 0, depth = 0, inner = 0, state = 0;
  std::size_t diffusion_steps = 100;
  std::string schedule = "scaled_linear";
  std::size_t log_every = 100;
};

void add_train(CLI::App& app, TrainOptions& o) {
  auto* cmd = app.add_subcommand("train", "Pretrain the denoiser on a directory of images or the synthetic corpus");
  cmd->add_option("--config", o.config, "key=value file; keys are long flag names")->capture_default_str();
  cmd->add_option("--data", o.data, "Directory of PGM/PNG training images (synthetic corpus when empty)")
      ->capture_default_str();
  cmd->add_option("--synthetic-count", o.synthetic_count, "Synthetic corpus size")->capture_default_str();
  cmd->add_option("--synthetic-size", o.synthetic_size, "Synthetic image extent")->capture_default_str();
  cmd->add_option("--synthetic-seed", o.synthetic_seed, "Synthetic corpus seed")->capture_default_str();
  cmd->add_option("-o,--output", o.output, "Checkpoint path (.ffz)")->capture_default_str();
  cmd->add_option("--loss-csv", o.loss_csv, "Loss log path (default: loss.csv beside the checkpoint)")
      ->capture_default_str();
  cmd->add_option("--steps", o.train.steps, "Optimizer iterations")->capture_default_str();
  cmd->add_option("--batch", o.train.batch, "Samples per iteration")->capture_default_str();
  cmd->add_option("--lr", o.train.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--beta1", o.train.beta1, "Adam first-moment decay")->capture_default_str();
  cmd->add_option("--beta2", o.train.beta2, "Adam second-moment decay")->capture_default_str();
  cmd->add_option("--adam-eps", o.train.epsilon, "Adam epsilon")->capture_default_str();
  cmd->add_option("--clip", o.train.clip_norm, "Global gradient-norm clip")->capture_default_str();
  cmd->add_option("--seed", o.train.seed, "Training seed")->capture_default_str();
  cmd->add_option("--crop", o.train.crop, "Training crop extent")->capture_default_str();
  cmd->add_option("--threads", o.train.threads, "Worker threads per batch (0 = all cores)")->capture_default_str();
  cmd->add_option("--preset", o.preset, "Architecture preset: desk or full")->capture_default_str();
  cmd->add_option("--patch", o.patch, "Patch size p (0 = preset)")->capture_default_str();
  cmd->add_option("--dim", o.dim, "Token width d (0 = preset)")->capture_default_str();
  cmd->add_option("--depth", o.depth, "Block count (0 = preset)")->capture_default_str();
  cmd->add_option("--inner", o.inner, "SSM channels E (0 = preset)")->capture_default_str();
  cmd->add_option("--state", o.state, "SSM state size N (0 = preset)")->capture_default_str();
  cmd->add_option("--diffusion-steps", o.diffusion_steps, "Diffusion chain length T")->capture_default_str();
  cmd->add_option("--schedule", o.schedule, "linear, scaled_linear or cosine")->capture_default_str();
  cmd->add_option("--log-every", o.log_every, "Print the running loss every N steps (0 = never)")
      ->capture_default_str();
}

int run_train(CLI::App& cmd, TrainOptions& o, std::ostream& out) {
  apply_config_file(cmd, o.config);
  if (o.output.empty()) throw UsageError("train: --output is required");

  DfmConfig arch = dfm_preset(o.preset);
  arch.channels = 1;
  if (o.patch) arch.patch = o.patch;
  if (o.dim) arch.dim = o.dim;
  if (o.depth) arch.depth = o.depth;
  if (o.inner) arch.inner = o.inner;
  if (o.state) arch.state = o.state;
  arch.validate();

  const NoiseSchedule sched = make_schedule(o.schedule, o.diffusion_steps);
  const auto corpus = o.data.empty() ? synthetic_corpus(o.synthetic_count, o.synthetic_size, o.synthetic_seed)
                                     : load_dataset(o.data);

  out << "training " << arch.depth << " blocks, d=" << arch.dim << ", p=" << arch.patch << " on "
      << corpus.size() << " images for " << o.train.steps << " steps\n";
  double window = 0.0;
  std::size_t in_window = 0;
  const auto progress = [&](const LossRecord& r) {
    window += r.loss;
    ++in_window;
    if (o.log_every && (r.step + 1) % o.log_every == 0) {
      out << "step " << r.step + 1 << " loss " << std::setprecision(6) << window / double(in_window) << '\n';
      window = 0.0;
      in_window = 0;
    }
  };
  TrainResult result = train(o.train, corpus, arch, sched, progress);
  result.checkpoint.diffusion_steps = o.diffusion_steps;
  result.checkpoint.schedule = sched.kind();
  save_checkpoint(result.checkpoint, o.output);

  const fs::path loss_path =
      o.loss_csv.empty() ? fs::path(o.output).parent_path() / "loss.csv" : fs::path(o.loss_csv);
  write_loss_csv(result.losses, loss_path);
  out << "wrote " << o.output << " and " << loss_path.string() << '\n';
  return kOk;
}

// ---- fuse --------------------------------------------------------------------

struct FuseOptions {
  std::string config;
  std::vector<std::string> inputs;
  std::string checkpoint;
  std::string output;
  std::string batch;
  std::size_t steps = 0;
  std::string schedule;
  EMConfig em;
  std::string form = "sqrt_abs";
  std::uint64_t seed = 0;
  std::string trace;
  std::size_t jobs = 1;
};

void add_fuse(CLI::App& app, FuseOptions& o) {
  auto* cmd = app.add_subcommand("fuse", "Fuse 2 or 3 registered source images");
  cmd->add_option("inputs", o.inputs, "Source images; the count selects two- or three-modal fusion");
  cmd->add_option("--config", o.config, "key=value file; keys are long flag names")->capture_default_str();
  cmd->add_option("--ckpt", o.checkpoint, "Denoiser checkpoint (.ffz)")->capture_default_str();
  cmd->add_option("-o,--output", o.output, "Fused PNG path")->capture_default_str();
  cmd->add_option("--batch", o.batch, "Manifest with one run per line: output input1 input2 [input3]")
      ->capture_default_str();
  cmd->add_option("--steps", o.steps, "Diffusion steps T (0 = checkpoint value)")->capture_default_str();
  cmd->add_option("--schedule", o.schedule, "Noise schedule (empty = checkpoint value)")->capture_default_str();
  cmd->add_option("--eta", o.em.eta, "Splitting penalty")->capture_default_str();
  cmd->add_option("--psi", o.em.psi, "Total-variation weight")->capture_default_str();
  cmd->add_option("--gamma0", o.em.gamma0, "Initial data-term scale")->capture_default_str();
  cmd->add_option("--rho0", o.em.rho0, "Initial prior-term scale")->capture_default_str();
  cmd->add_option("--inner-sweeps", o.em.inner_sweeps, "k/u/x sweeps per diffusion step")->capture_default_str();
  cmd->add_option("--expectation-form", o.form, "sqrt_abs or squared")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Noise seed; batch run i uses seed + i")->capture_default_str();
  cmd->add_option("--trace", o.trace, "Per-step CSV trace path (batch runs append _<i>)")->capture_default_str();
  cmd->add_option("--jobs", o.jobs, "Concurrent fusion runs in batch mode")->capture_default_str();
}

struct FuseJob {
  std::vector<std::string> inputs;
  std::string output;
  std::string trace;
  std::uint64_t seed;
};

std::vector<FuseJob> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read batch manifest " + path);
  std::vector<FuseJob> jobs;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::vector<std::string> words;
    for (std::string w; fields >> w;) words.push_back(w);
    if (words.empty() || words.front().front() == '#') continue;
    FuseJob job;
    job.output = words.front();
    job.inputs.assign(words.begin() + 1, words.end());
    jobs.push_back(std::move(job));
  }
  if (jobs.empty()) throw UsageError("batch manifest " + path + " lists no runs");
  return jobs;
}

void require_arity(const std::vector<std::string>& inputs) {
  if (inputs.size() < 2 || inputs.size() > 3)
    throw UsageError("2 or 3 inputs supported, got " + std::to_string(inputs.size()));
}

void fuse_one(const FuseJob& job, const Checkpoint& ckpt, const NoiseSchedule& sched, const EMConfig& em) {
  std::vector<LumaChroma> sources;
  for (const auto& path : job.inputs) sources.push_back(to_luma_chroma(load_image(path)));
  for (std::size_t i = 1; i < sources.size(); ++i)
    if (sources[i].luma.height() != sources[0].luma.height() || sources[i].luma.width() != sources[0].luma.width())
      throw InvalidArgument("source " + job.inputs[i] + " differs in extent from " + job.inputs[0]);

  FusionRun run{SourceStack{sources[0].luma, sources[1].luma, std::nullopt}, sched, &ckpt.params, em, job.seed,
                !job.trace.empty()};
  if (sources.size() == 3) run.stack.img3 = sources[2].luma;
  FusionResult result = fuse(run);

  LumaChroma fused{std::move(result.fused), std::nullopt};
  for (const auto& s : sources)
    if (s.chroma) {
      fused.chroma = s.chroma;
      break;
    }
  save_image(from_luma_chroma(fused), job.output);
  if (!job.trace.empty()) write_trace_csv(result.trace, job.trace);
}

std::string indexed_path(const std::string& path, std::size_t i) {
  if (path.empty()) return path;
  fs::path p(path);
  return (p.parent_path() / (p.stem().string() + "_" + std::to_string(i) + p.extension().string())).string();
}

int run_fuse(CLI::App& cmd, FuseOptions& o, std::ostream& out) {
  apply_config_file(cmd, o.config);
  if (o.checkpoint.empty()) throw UsageError("fuse: --ckpt is required");
  o.em.form = parse_expectation_form(o.form);
  o.em.validate();
  if (o.jobs == 0) throw UsageError("fuse: --jobs must be at least 1");

  std::vector<FuseJob> jobs;
  if (!o.batch.empty()) {
    if (!o.inputs.empty() || !o.output.empty()) throw UsageError("fuse: --batch excludes positional inputs and -o");
    jobs = read_manifest(o.batch);
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      require_arity(jobs[i].inputs);
      jobs[i].seed = o.seed + i;
      jobs[i].trace = indexed_path(o.trace, i);
    }
  } else {
    require_arity(o.inputs);
    if (o.output.empty()) throw UsageError("fuse: --output is required");
    jobs.push_back({o.inputs, o.output, o.trace, o.seed});
  }

  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const NoiseSchedule sched =
      make_schedule(o.schedule.empty() ? ckpt.schedule : parse_schedule_kind(o.schedule),
                    o.steps ? o.steps : ckpt.diffusion_steps);

  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        fuse_one(jobs[i], ckpt, sched, o.em);
        std::lock_guard lock(log_mutex);
        out << "fused " << jobs[i].inputs.size() << " sources -> " << jobs[i].output << '\n';
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t j = 1; j < std::min(o.jobs, jobs.size()); ++j) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  return kOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalOptions {
  std::string config;
  std::vector<std::string> fused;
  std::vector<std::string> sources;
  std::string csv;
  std::string json;
};

void add_eval(CLI::App& app, EvalOptions& o) {
  auto* cmd = app.add_subcommand("eval", "Score fused images against their sources");
  cmd->add_option("fused", o.fused, "Fused images, one report row each");
  cmd->add_option("--config", o.config, "key=value file; keys are long flag names")->capture_default_str();
  cmd->add_option("-s,--sources", o.sources, "The 2 or 3 source images");
  cmd->add_option("--csv", o.csv, "CSV report path")->capture_default_str();
  cmd->add_option("--json", o.json, "JSON report path")->capture_default_str();
}

ImageBuffer luma_buffer(const std::string& path) { return denormalize(to_luma_chroma(load_image(path)).luma); }

int run_eval(CLI::App& cmd, EvalOptions& o, std::ostream& out) {
  apply_config_file(cmd, o.config);
  if (o.fused.empty()) throw UsageError("eval: at least one fused image is required");
  require_arity(o.sources);

  std::vector<ImageBuffer> sources;
  std::vector<std::string> ids;
  for (const auto& s : o.sources) {
    sources.push_back(luma_buffer(s));
    ids.push_back(stem_of(s));
  }
  std::vector<MetricReport> reports;
  for (const auto& f : o.fused) reports.push_back(evaluate(luma_buffer(f), sources, stem_of(f), ids));

  out << report_table(reports);
  if (!o.csv.empty()) {
    std::ofstream csv(o.csv);
    csv << report_csv_header() << '\n';
    for (const auto& r : reports) csv << report_csv_row(r) << '\n';
    if (!csv) throw Error("cannot write " + o.csv);
  }
  if (!o.json.empty()) {
    std::ofstream json(o.json);
    json << report_json(reports);
    if (!json) throw Error("cannot write " + o.json);
  }
  return kOk;
}

// ---- selftest ----------------------------------------------------------------

struct SelftestCliOptions {
  std::string config;
  std::string suite;
  oracle::SelftestOptions opts;
  bool list = false;
};

void add_selftest(CLI::App& app, SelftestCliOptions& o) {
  auto* cmd = app.add_subcommand("selftest", "Run the built-in oracle suites");
  cmd->add_option("--config", o.config, "key=value file; keys are long flag names")->capture_default_str();
  cmd->add_option("--suite", o.suite, "Run only suites with this name or module (empty = all)")
      ->capture_default_str();
  cmd->add_option("--seed", o.opts.seed, "Seed for the random instances")->capture_default_str();
  cmd->add_option("--inject-fft-fault", o.opts.fft_fault,
                  "Relative corruption of the FFT transfer cache in dense-solve (negative test)")
      ->capture_default_str();
  cmd->add_flag("--list", o.list, "List suites and exit");
}

int run_selftest_cmd(CLI::App& cmd, SelftestCliOptions& o, std::ostream& out) {
  apply_config_file(cmd, o.config);
  if (o.list) {
    for (const auto& s : oracle::selftest_suites()) out << s.name << " (" << s.group << ")\n";
    return kOk;
  }
  std::vector<const oracle::Suite*> selected;
  try {
    selected = oracle::select_suites(o.suite);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  const auto start = std::chrono::steady_clock::now();
  const auto outcomes = oracle::run_selftest(o.suite, o.opts, out);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& s) { return !s.result.passed; });
  out << outcomes.size() - failed << "/" << outcomes.size() << " suites passed in " << std::fixed
      << std::setprecision(1) << secs << " s\n";
  return failed ? kSelftestFailed : kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Multi-modal image fusion with a diffusion prior and EM likelihood correction", "flexfuse");
  app.require_subcommand(1);
  app.set_version_flag("--version", "flexfuse 0.1.0");

  TrainOptions train_opts;
  FuseOptions fuse_opts;
  EvalOptions eval_opts;
  SelftestCliOptions selftest_opts;
  add_train(app, train_opts);
  add_fuse(app, fuse_opts);
  add_eval(app, eval_opts);
  add_selftest(app, selftest_opts);
  for (CLI::App* sub : app.get_subcommands({}))
    for (CLI::Option* opt : sub->get_options())
      if (opt->get_expected_min() > 0 && opt->get_items_expected_max() == 1 && !opt->get_positional() &&
          opt->get_default_str().empty())
        opt->default_str("\"\"");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    CLI::App* cmd = app.get_subcommands().front();
    const std::string& name = cmd->get_name();
    if (name == "train") return run_train(*cmd, train_opts, out);
    if (name == "fuse") return run_fuse(*cmd, fuse_opts, out);
    if (name == "eval") return run_eval(*cmd, eval_opts, out);
    return run_selftest_cmd(*cmd, selftest_opts, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace flexfuse::cli
