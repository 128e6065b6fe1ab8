#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"

#include "ehrlich/ehrlich.hpp"
#include "ehrlich/ga.hpp"
#include "ehrlich/harness.hpp"
#include "ehrlich/instance_io.hpp"
#include "ehrlich/llome.hpp"
#include "ehrlich/losses.hpp"
#include "ehrlich/text_adapter.hpp"

namespace fs = std::filesystem;
using namespace ehrlich;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitAbort = 3;

fs::path out_dir() {
  const char* env = std::getenv("EHRLICH_OUT_DIR");
  fs::path dir = env && *env ? fs::path(env) : fs::current_path();
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InvariantError("output-file", "cannot write " + path.string());
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvariantError("input-file", "cannot read " + path);
  return in;
}

// Instance selection shared by the subcommands.
struct InstanceOptions {
  std::string path;
  std::string name;
  int v = 0, L = 0, c = 0, k = 0, q = 0;
  double epistasis = 0.0, temperature = 1.0, feasible_fraction = 0.75;
  std::uint64_t seed = 0;

  void add(CLI::App* app, bool allow_file) {
    if (allow_file) app->add_option("--instance", path, "instance document (JSON)");
    app->add_option("--name", name, "instance name Ehr(v,L)-c-k-q");
    app->add_option("--v", v, "vocabulary size");
    app->add_option("--L", L, "sequence length");
    app->add_option("--c", c, "number of motifs");
    app->add_option("--k", k, "motif length");
    app->add_option("--q", q, "quantization (default k)");
    app->add_option("--epistasis", epistasis, "epistasis factor a");
    app->add_option("--softmax-temperature", temperature, "transition softmax temperature");
    app->add_option("--feasible-fraction", feasible_fraction, "feasible transitions per row");
    app->add_option("--instance-seed,--seed", seed, "instance seed");
  }

  EhrlichParams params() const {
    EhrlichParams p;
    if (!name.empty()) {
      p = parse_name(name);
    } else {
      if (v == 0 || L == 0 || c == 0 || k == 0)
        throw InvariantError("instance", "give --instance, --name or all of --v --L --c --k");
      p.vocab_size = v;
      p.length = L;
      p.num_motifs = c;
      p.motif_length = k;
      p.quantization = q > 0 ? q : k;
    }
    p.epistasis = epistasis;
    p.temperature = temperature;
    p.feasible_fraction = feasible_fraction;
    p.seed = seed;
    return p;
  }

  EhrlichFunction load() const {
    if (!path.empty()) return load_instance(path);
    const auto p = params();
    p.validate();
    return EhrlichFunction::generate(p);
  }
};

void add_ga_options(CLI::App* app, GAConfig& ga) {
  app->add_option("--particles", ga.num_particles, "GA population size");
  app->add_option("--survival-quantile", ga.survival_quantile, "GA survival quantile alpha");
  app->add_option("--mutation-prob", ga.mutation_prob, "GA per-position mutation probability");
  app->add_option("--recombination-prob", ga.recombination_prob, "GA recombination probability");
  app->add_option("--threads", ga.threads, "evaluation threads");
}

struct LoopOptions {
  LoopConfig loop;
  double mutation_rate = 0.0;
  std::string mode = "pairs";
  bool no_adjust = false;
  std::string generator;

  void add(CLI::App* app) {
    app->add_option("--rounds", loop.rounds, "outer rounds T");
    app->add_option("--evals-per-round", loop.evals_per_round, "oracle calls per round j");
    app->add_option("--presolver-rounds", loop.presolver_rounds, "GA presolver generations n0");
    app->add_option("--seeds-per-round", loop.seeds_per_round, "refinement seeds n_s");
    app->add_option("--refine-iters", loop.refine_iters, "refinement steps n_i");
    app->add_option("--samples-per-iter", loop.samples_per_iter, "samples per step n_o");
    app->add_option("--temperatures", loop.base_temperatures, "base sampling temperatures")
        ->delimiter(',');
    app->add_option("--min-loglik-per-token", loop.min_loglik_per_token,
                    "likelihood floor per token");
    app->add_option("--max-infeasible-fraction", loop.max_infeasible_fraction,
                    "infeasible share cap");
    app->add_option("--distance-threshold", loop.distance_threshold, "pair distance delta_x");
    app->add_option("--num-neighbors", loop.num_neighbors, "nearest neighbours k_n");
    app->add_option("--dataset-mode", mode, "pairs or triples")
        ->check(CLI::IsMember({"pairs", "triples"}));
    app->add_flag("--no-temperature-adjust", no_adjust, "keep base temperatures");
    app->add_option("--mutation-rate", mutation_rate, "baseline proposer rate (default 4/L)");
    app->add_option("--generator", generator,
                    "external text generator command (line protocol on stdin/stdout)");
  }

  LoopConfig config(std::uint64_t seed) const {
    LoopConfig c = loop;
    c.dataset_mode = mode == "triples" ? DatasetMode::kTriples : DatasetMode::kPairs;
    c.adjust_temperature = !no_adjust;
    c.seed = seed;
    return c;
  }
};

std::vector<std::string> split_command(const std::string& cmd) {
  std::istringstream in(cmd);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

void write_run_files(const fs::path& dir, const RunRecord& rec) {
  {
    auto out = open_out(dir / (rec.run_id + ".evals.csv"));
    write_run_csv(out, rec);
  }
  {
    auto out = open_out(dir / (rec.run_id + ".curve.csv"));
    write_curve_csv(out, regret_curve(rec));
  }
  auto out = open_out(dir / (rec.run_id + ".json"));
  out << run_summary_json(rec) << '\n';
}

std::string run_id(const std::string& solver, const EhrlichFunction& f, std::uint64_t seed) {
  std::string name = f.name();
  for (auto& ch : name)
    if (ch == '(' || ch == ')' || ch == ',') ch = '_';
  return solver + "_" + name + "_i" + std::to_string(f.params().seed) + "_s" +
         std::to_string(seed);
}

// Subcommands

int cmd_gen(const InstanceOptions& inst, const std::string& output) {
  const auto f = inst.load();
  const auto doc = serialize_instance(f);
  if (output.empty()) {
    std::cout << doc;
    std::cerr << f.name() << '\n';
  } else {
    auto out = open_out(output);
    out << doc;
    std::cout << f.name() << '\n';
  }
  return 0;
}

int cmd_eval(const InstanceOptions& inst, const std::string& sequences, const std::string& output) {
  const auto f = inst.load();
  auto in = open_in(sequences);
  const auto lines = read_sequence_file(in, f.length());
  std::ofstream file;
  if (!output.empty()) file = open_out(output);
  std::ostream& out = output.empty() ? std::cout : file;
  for (const auto& l : lines) {
    if (static_cast<int>(l.tokens.size()) != f.length())
      throw InvariantError("sequence-length", "expected " + std::to_string(f.length()) +
                                                  " tokens, got " +
                                                  std::to_string(l.tokens.size()));
    write_sequence_line(out, l.tokens, f.evaluate(l.tokens));
  }
  const auto ledger = out_dir() / "eval_ledger.csv";
  const bool fresh = !fs::exists(ledger);
  std::ofstream log(ledger, std::ios::app);
  if (fresh) log << "instance,instance_seed,evaluations\n";
  log << f.name() << ',' << f.params().seed << ',' << lines.size() << '\n';
  std::cerr << "evaluations: " << lines.size() << '\n';
  return 0;
}

int cmd_run_ga(const InstanceOptions& inst, GAConfig ga, std::int64_t budget,
               const std::vector<std::uint64_t>& seeds) {
  ga.validate();
  const auto f = inst.load();
  const auto dir = out_dir();
  for (const auto seed : seeds) {
    ga.seed = seed;
    const auto run = record_ga_run(f, ga, budget, run_id("ga", f, seed));
    write_run_files(dir, run.record);
    const auto curve = regret_curve(run.record);
    std::cout << run.record.run_id << " evals=" << run.record.rows.size()
              << " ledger=" << run.state.evals_used
              << " min_regret=" << format_score(curve.back().min_regret)
              << " evals_per_s=" << std::llround(run.record.evals_per_second) << '\n';
  }
  return 0;
}

int cmd_run_llome(const InstanceOptions& inst, const GAConfig& ga, const LoopOptions& opts,
                  const std::vector<std::uint64_t>& seeds) {
  const auto f = inst.load();
  const auto dir = out_dir();
  for (const auto seed : seeds) {
    GAConfig g = ga;
    g.seed = seed;
    const auto loop = opts.config(seed);
    LlomeRun run;
    if (opts.generator.empty()) {
      const double rate =
          opts.mutation_rate > 0 ? opts.mutation_rate : default_mutation_rate(f.length());
      run = record_llome_run(f, g, loop, rate, run_id("llome", f, seed));
    } else {
      auto transport = std::make_shared<SubprocessTransport>(split_command(opts.generator));
      const TextGenerator text(transport, f.vocab_size(), f.length());
      run = record_llome_run(f, g, loop, text, "llome-text", "text cmd=" + opts.generator,
                             run_id("llome", f, seed));
    }
    write_run_files(dir, run.record);
    {
      auto out = open_out(dir / (run.record.run_id + ".report.csv"));
      write_report_csv(out, summarize_rounds(run.record));
    }
    std::cout << run.record.run_id << " evals=" << run.result.total_evals
              << " presolver_min_regret=" << format_score(run.result.presolver_min_regret)
              << " min_regret="
              << format_score(run.result.rounds.empty() ? run.result.presolver_min_regret
                                                        : run.result.rounds.back().min_regret)
              << '\n';
  }
  return 0;
}

int cmd_sweep(const InstanceOptions& inst, const GAConfig& ga, const std::string& axis,
              const std::vector<int>& values, std::int64_t budget,
              const std::vector<std::uint64_t>& seeds) {
  SweepConfig config;
  config.axis = parse_axis(axis);
  config.values = values;
  config.base = inst.params();
  config.ga = ga;
  config.ga.validate();
  config.budget = budget;
  config.seeds = seeds;
  const auto report = run_sweep(config);
  const auto path = out_dir() / ("sweep_" + axis + ".csv");
  {
    auto out = open_out(path);
    write_sweep_csv(out, report);
  }
  std::cout << "value,instance,median_final_regret,hypervolume\n";
  for (const auto& cell : report.cells)
    std::cout << cell.value << ',' << cell.instance << ',' << format_score(cell.median_final_regret)
              << ',' << format_score(cell.hypervolume) << '\n';
  return 0;
}

int cmd_report(const std::vector<std::string>& records, const std::string& curve_path,
               bool json) {
  const auto dir = out_dir();
  for (const auto& path : records) {
    auto in = open_in(path);
    const auto rec = read_run_csv(in);
    const auto rounds = summarize_rounds(rec);
    if (!curve_path.empty()) {
      auto cin = open_in(curve_path);
      const auto stored = read_curve_csv(cin);
      const auto fresh = regret_curve(rec);
      bool same = stored.size() == fresh.size();
      for (std::size_t i = 0; same && i < fresh.size(); ++i)
        same = stored[i].evals == fresh[i].evals && stored[i].min_regret == fresh[i].min_regret;
      if (!same)
        throw InvariantError("curve-consistency",
                             "stored curve differs from the one recomputed from " + path);
      std::cerr << "curve consistent: " << curve_path << '\n';
    }
    {
      auto out = open_out(dir / (rec.run_id + ".report.csv"));
      write_report_csv(out, rounds);
    }
    {
      auto out = open_out(dir / (rec.run_id + ".report.json"));
      out << report_json(rec, rounds) << '\n';
    }
    if (json)
      std::cout << report_json(rec, rounds) << '\n';
    else
      write_report_csv(std::cout, rounds);
  }
  return 0;
}

int cmd_losses(int outcomes, std::uint64_t seed, const std::vector<double>& lambdas, double beta,
               const std::string& batch_path) {
  if (!batch_path.empty()) {
    auto in = open_in(batch_path);
    const auto batch = read_loss_batch_csv(in);
    if (batch.empty()) throw InvariantError("loss-csv", "empty batch");
    std::cout << "lambda,marge,reinforce\n";
    for (const double l : lambdas)
      std::cout << format_score(l) << ',' << format_score(marge_loss(batch, l, beta)) << ','
                << format_score(reinforce_loss(batch, l)) << '\n';
    return 0;
  }
  if (outcomes < 2) throw InvariantError("outcomes", "need at least 2 outcomes");
  RandomStream rng(seed, StreamTag::kSampling);
  std::vector<double> f(static_cast<std::size_t>(outcomes)), ref(f.size());
  for (auto& x : f) x = rng.uniform();
  double total = 0.0;
  for (auto& x : ref) total += (x = 0.1 + rng.uniform());
  for (auto& x : ref) x /= total;
  const auto star = boltzmann_target(f, beta);
  std::cout << "# translation_invariance unclipped="
            << format_score(translation_invariance_deviation(f, beta, false))
            << " clipped=" << format_score(translation_invariance_deviation(f, beta, true))
            << '\n';
  std::cout << "lambda,kl_to_star,kl_from_ref,objective,iterations\n";
  for (const auto& row : sic_sweep(star, ref, lambdas))
    std::cout << format_score(row.lambda) << ',' << format_score(row.kl_to_star) << ','
              << format_score(row.kl_from_ref) << ',' << format_score(row.objective) << ','
              << row.iterations << '\n';
  return 0;
}

int cmd_serve(int v, int L, double rate) {
  const MutationProposer proposer(v, L, rate > 0 ? rate : default_mutation_rate(L));
  serve_text_protocol(proposer, v, L, std::cin, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ehrlich function benchmark and solvers"};
  app.require_subcommand(1);

  InstanceOptions inst;
  GAConfig ga;
  LoopOptions loop;
  std::string output, sequences, curve, axis = "q", batch;
  std::int64_t budget = 100000;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<int> values;
  std::vector<std::string> records;
  std::vector<double> lambdas = {1e-6, 1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6};
  int outcomes = 10, serve_v = 0, serve_L = 0;
  double beta = 1.0, serve_rate = 0.0;
  std::uint64_t loss_seed = 0;
  bool json = false;

  auto* gen = app.add_subcommand("gen", "generate an instance document");
  inst.add(gen, false);
  gen->add_option("-o,--output", output, "write to file instead of stdout");

  auto* eval = app.add_subcommand("eval", "score a sequence file");
  inst.add(eval, true);
  eval->add_option("--sequences", sequences, "sequence file")->required();
  eval->add_option("-o,--output", output, "scored output file");

  auto* run_ga_cmd = app.add_subcommand("run-ga", "genetic algorithm runs");
  inst.add(run_ga_cmd, true);
  add_ga_options(run_ga_cmd, ga);
  run_ga_cmd->add_option("--budget", budget, "evaluation budget");
  run_ga_cmd->add_option("--seeds", seeds, "solver seeds")->delimiter(',');

  auto* run_llome_cmd = app.add_subcommand("run-llome", "LLOME runs with the baseline proposer");
  inst.add(run_llome_cmd, true);
  add_ga_options(run_llome_cmd, ga);
  loop.add(run_llome_cmd);
  run_llome_cmd->add_option("--seeds", seeds, "solver seeds")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "parameter sensitivity sweep with the GA");
  inst.add(sweep, false);
  add_ga_options(sweep, ga);
  sweep->add_option("--axis", axis, "v, L, c, k or q");
  sweep->add_option("--values", values, "axis values")->delimiter(',')->required();
  sweep->add_option("--budget", budget, "evaluation budget");
  sweep->add_option("--seeds", seeds, "seeds")->delimiter(',');

  auto* report = app.add_subcommand("report", "summaries from per-evaluation logs");
  report->add_option("records", records, "run CSV files")->required();
  report->add_option("--check-curve", curve, "stored curve to compare with the log");
  report->add_flag("--json", json, "print JSON instead of CSV");

  auto* losses = app.add_subcommand("losses", "preference-loss numerics on explicit domains");
  losses->add_option("--outcomes", outcomes, "domain size");
  losses->add_option("--seed", loss_seed, "random domain seed");
  losses->add_option("--lambdas", lambdas, "regularization weights")->delimiter(',');
  losses->add_option("--beta", beta, "reward scale");
  losses->add_option("--batch", batch, "loss batch CSV to score");

  auto* serve = app.add_subcommand("serve-proposer",
                                   "answer the text generator protocol with the baseline proposer");
  serve->add_option("--v", serve_v, "vocabulary size")->required();
  serve->add_option("--L", serve_L, "sequence length")->required();
  serve->add_option("--mutation-rate", serve_rate, "rate (default 4/L)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInvalid;
  }

  try {
    if (*gen) return cmd_gen(inst, output);
    if (*eval) return cmd_eval(inst, sequences, output);
    if (*run_ga_cmd) return cmd_run_ga(inst, ga, budget, seeds);
    if (*run_llome_cmd) return cmd_run_llome(inst, ga, loop, seeds);
    if (*sweep) return cmd_sweep(inst, ga, axis, values, budget, seeds);
    if (*report) return cmd_report(records, curve, json);
    if (*losses) return cmd_losses(outcomes, loss_seed, lambdas, beta, batch);
    if (*serve) return cmd_serve(serve_v, serve_L, serve_rate);
  } catch (const SolverAbort& e) {
    std::cerr << "solver abort: " << e.what() << '\n';
    return kExitAbort;
  } catch (const InvariantError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  return kExitInvalid;
}
