#include "ehrlich/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

#include "ehrlich/instance_io.hpp"

namespace ehrlich {

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(sep);
    out.push_back(s.substr(0, pos));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

[[noreturn]] void csv_error(const char* what, std::int64_t line, const std::string& detail) {
  throw InvariantError(what, "line " + std::to_string(line) + ": " + detail);
}

template <typename T>
bool parse_number(std::string_view s, T& out, int base = 10) {
  std::from_chars_result res{};
  if constexpr (std::is_floating_point_v<T>)
    res = std::from_chars(s.data(), s.data() + s.size(), out);
  else
    res = std::from_chars(s.data(), s.data() + s.size(), out, base);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  const auto res = std::to_chars(buf, buf + 16, v, 16);
  std::string s(buf, res.ptr);
  return std::string(16 - s.size(), '0') + s;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

// JSON has no inf/nan; emit null.
nlohmann::json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

// Records

void RunRecorder::add(std::int64_t round, const Sequence& s, double value, double margin) {
  EvalRow row;
  row.eval_index = static_cast<std::int64_t>(record_.rows.size());
  row.round = round;
  row.value = value;
  row.feasible = value != kInfeasible;
  row.seq_hash = hash_sequence(s);
  row.unique = seen_.insert(row.seq_hash).second;
  row.margin = margin;
  record_.rows.push_back(row);
}

void validate_record(const RunRecord& record) {
  for (std::size_t i = 0; i < record.rows.size(); ++i) {
    const auto& r = record.rows[i];
    if (i > 0 && r.eval_index <= record.rows[i - 1].eval_index)
      throw InvariantError("eval-index", "eval_index not strictly increasing at row " +
                                             std::to_string(i));
    if ((r.value == kInfeasible) == r.feasible)
      throw InvariantError("feasible-flag",
                           "value/feasible mismatch at eval " + std::to_string(r.eval_index));
  }
}

void write_run_csv(std::ostream& out, const RunRecord& record) {
  out << "# ehrlich-run v" << kRunSchemaVersion << " run_id=" << record.run_id
      << " instance=" << record.instance << " seed=" << record.instance_seed
      << " solver=" << record.solver << " config_hash=" << record.config_hash
      << " budget=" << record.budget << " duration_s=" << format_score(record.duration_seconds)
      << " evals_per_s=" << format_score(record.evals_per_second) << '\n';
  out << kRunColumns << '\n';
  for (const auto& r : record.rows)
    out << r.eval_index << ',' << r.round << ',' << format_score(r.value) << ','
        << (r.feasible ? 1 : 0) << ',' << (r.unique ? 1 : 0) << ',' << format_score(r.margin)
        << ',' << hex64(r.seq_hash) << '\n';
}

RunRecord read_run_csv(std::istream& in) {
  RunRecord rec;
  std::string line;
  std::int64_t lineno = 0;
  if (!std::getline(in, line)) csv_error("run-csv", 1, "empty file");
  ++lineno;
  const std::string prefix = "# ehrlich-run v";
  if (line.rfind(prefix, 0) != 0) csv_error("run-csv", lineno, "missing header comment");
  const auto fields = split(std::string_view(line).substr(prefix.size()), ' ');
  int version = 0;
  if (!parse_number(fields[0], version)) csv_error("run-csv", lineno, "bad version");
  if (version != kRunSchemaVersion)
    csv_error("schema-version", lineno, "unsupported version " + std::to_string(version));
  for (std::size_t i = 1; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) csv_error("run-csv", lineno, "bad header field");
    const auto key = fields[i].substr(0, eq);
    const auto val = fields[i].substr(eq + 1);
    bool ok = true;
    if (key == "run_id")
      rec.run_id = val;
    else if (key == "instance")
      rec.instance = val;
    else if (key == "seed")
      ok = parse_number(val, rec.instance_seed);
    else if (key == "solver")
      rec.solver = val;
    else if (key == "config_hash")
      rec.config_hash = val;
    else if (key == "budget")
      ok = parse_number(val, rec.budget);
    else if (key == "duration_s")
      ok = parse_number(val, rec.duration_seconds);
    else if (key == "evals_per_s")
      ok = parse_number(val, rec.evals_per_second);
    if (!ok) csv_error("run-csv", lineno, "bad value for " + std::string(key));
  }
  if (!std::getline(in, line) || line != kRunColumns)
    csv_error("run-csv", lineno + 1, "expected column header");
  ++lineno;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 7) csv_error("run-csv", lineno, "expected 7 columns");
    EvalRow r;
    int feasible = 0, unique = 0;
    if (!parse_number(cols[0], r.eval_index) || !parse_number(cols[1], r.round) ||
        !parse_number(cols[2], r.value) || !parse_number(cols[3], feasible) ||
        !parse_number(cols[4], unique) || !parse_number(cols[5], r.margin) ||
        !parse_number(cols[6], r.seq_hash, 16))
      csv_error("run-csv", lineno, "malformed row");
    r.feasible = feasible != 0;
    r.unique = unique != 0;
    rec.rows.push_back(r);
  }
  validate_record(rec);
  return rec;
}

std::string run_summary_json(const RunRecord& record) {
  const auto curve = regret_curve(record);
  std::int64_t feasible = 0, unique = 0;
  for (const auto& r : record.rows) {
    feasible += r.feasible;
    unique += r.unique;
  }
  nlohmann::json j;
  j["schema_version"] = kRunSchemaVersion;
  j["run_id"] = record.run_id;
  j["instance"] = record.instance;
  j["seed"] = record.instance_seed;
  j["solver"] = record.solver;
  j["config_hash"] = record.config_hash;
  j["budget"] = record.budget;
  j["evals"] = record.rows.size();
  j["feasible_evals"] = feasible;
  j["unique_evals"] = unique;
  j["final_min_regret"] = curve.empty() ? 1.0 : curve.back().min_regret;
  j["duration_s"] = num(record.duration_seconds);
  j["evals_per_s"] = num(record.evals_per_second);
  return j.dump(2);
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

std::string canonical_config(const GAConfig& ga) {
  std::ostringstream s;
  s << "ga n=" << ga.num_particles << " alpha=" << format_score(ga.survival_quantile)
    << " pm=" << format_score(ga.mutation_prob) << " pr=" << format_score(ga.recombination_prob)
    << " seed=" << ga.seed;
  return s.str();
}

std::string canonical_config(const GAConfig& ga, const LoopConfig& loop,
                             const std::string& generator_config) {
  std::ostringstream s;
  s << canonical_config(ga) << " llome T=" << loop.rounds << " j=" << loop.evals_per_round
    << " n0=" << loop.presolver_rounds << " ns=" << loop.seeds_per_round
    << " ni=" << loop.refine_iters << " no=" << loop.samples_per_iter << " temps=";
  for (const double t : loop.base_temperatures) s << format_score(t) << ';';
  s << " floor=" << format_score(loop.min_loglik_per_token)
    << " pinf=" << format_score(loop.max_infeasible_fraction)
    << " dx=" << format_score(loop.distance_threshold) << " kn=" << loop.num_neighbors
    << " mode=" << (loop.dataset_mode == DatasetMode::kPairs ? "pairs" : "triples")
    << " adjust=" << loop.adjust_temperature << " seed=" << loop.seed
    << " generator=" << generator_config;
  return s.str();
}

// Curves

RegretCurve regret_curve(const RunRecord& record) {
  RegretCurve curve;
  double best = 1.0;
  for (const auto& r : record.rows) {
    if (!r.feasible) continue;
    const double regret = regret_from_value(r.value);
    if (regret < best) {
      best = regret;
      curve.push_back({r.eval_index + 1, best});
    }
  }
  const auto total = static_cast<std::int64_t>(record.rows.size());
  if (curve.empty() || curve.back().evals != total) curve.push_back({total, best});
  return curve;
}

double curve_at(const RegretCurve& curve, std::int64_t evals) {
  double out = 1.0;
  for (const auto& p : curve) {
    if (p.evals > evals) break;
    out = p.min_regret;
  }
  return out;
}

void write_curve_csv(std::ostream& out, const RegretCurve& curve) {
  out << "# ehrlich-curve v" << kRunSchemaVersion << '\n' << "evals,min_regret\n";
  for (const auto& p : curve) out << p.evals << ',' << format_score(p.min_regret) << '\n';
}

RegretCurve read_curve_csv(std::istream& in) {
  RegretCurve curve;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line == "evals,min_regret") continue;
    const auto cols = split(line, ',');
    CurvePoint p;
    if (cols.size() != 2 || !parse_number(cols[0], p.evals) ||
        !parse_number(cols[1], p.min_regret))
      csv_error("curve-csv", lineno, "malformed row");
    curve.push_back(p);
  }
  return curve;
}

// Reports

std::vector<RoundSummary> summarize_rounds(const RunRecord& record) {
  std::vector<RoundSummary> out;
  std::unordered_map<std::int64_t, std::size_t> index;
  std::vector<std::unordered_set<std::uint64_t>> distinct;
  std::vector<std::int64_t> feasible, margins;
  double best = 1.0;
  for (const auto& r : record.rows) {
    auto [it, inserted] = index.emplace(r.round, out.size());
    if (inserted) {
      RoundSummary s;
      s.round = r.round;
      s.mean_margin = 0.0;
      s.max_margin = -std::numeric_limits<double>::infinity();
      out.push_back(s);
      distinct.emplace_back();
      feasible.push_back(0);
      margins.push_back(0);
    }
    const auto k = it->second;
    auto& s = out[k];
    ++s.evals;
    distinct[k].insert(r.seq_hash);
    if (r.feasible) {
      ++feasible[k];
      const double regret = regret_from_value(r.value);
      s.batch_min_regret = std::min(s.batch_min_regret, regret);
      best = std::min(best, regret);
    }
    if (!std::isnan(r.margin)) {
      ++margins[k];
      s.mean_margin += r.margin;
      s.max_margin = std::max(s.max_margin, r.margin);
    }
    s.min_regret = best;
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& s = out[k];
    const double n = static_cast<double>(s.evals);
    s.unique_fraction = static_cast<double>(distinct[k].size()) / n;
    s.feasible_fraction = static_cast<double>(feasible[k]) / n;
    if (margins[k] > 0) {
      s.mean_margin /= static_cast<double>(margins[k]);
    } else {
      s.mean_margin = nan();
      s.max_margin = nan();
    }
  }
  return out;
}

void write_report_csv(std::ostream& out, const std::vector<RoundSummary>& rounds) {
  out << "# ehrlich-report v" << kRunSchemaVersion << '\n'
      << "round,evals,unique_fraction,feasible_fraction,mean_margin,max_margin,batch_min_regret,"
         "min_regret\n";
  for (const auto& s : rounds)
    out << s.round << ',' << s.evals << ',' << format_score(s.unique_fraction) << ','
        << format_score(s.feasible_fraction) << ',' << format_score(s.mean_margin) << ','
        << format_score(s.max_margin) << ',' << format_score(s.batch_min_regret) << ','
        << format_score(s.min_regret) << '\n';
}

std::string report_json(const RunRecord& record, const std::vector<RoundSummary>& rounds) {
  nlohmann::json j;
  j["schema_version"] = kRunSchemaVersion;
  j["run_id"] = record.run_id;
  j["instance"] = record.instance;
  j["solver"] = record.solver;
  j["evals"] = record.rows.size();
  auto& rs = j["rounds"] = nlohmann::json::array();
  for (const auto& s : rounds)
    rs.push_back({{"round", s.round},
                  {"evals", s.evals},
                  {"unique_fraction", num(s.unique_fraction)},
                  {"feasible_fraction", num(s.feasible_fraction)},
                  {"mean_margin", num(s.mean_margin)},
                  {"max_margin", num(s.max_margin)},
                  {"batch_min_regret", num(s.batch_min_regret)},
                  {"min_regret", num(s.min_regret)}});
  auto& c = j["curve"] = nlohmann::json::array();
  for (const auto& p : regret_curve(record)) c.push_back({p.evals, p.min_regret});
  return j.dump(2);
}

double hypervolume(const std::vector<CurvePoint>& points) {
  if (points.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : points) sum += static_cast<double>(p.evals) * p.min_regret;
  return sum / static_cast<double>(points.size());
}

double measure_throughput(const EhrlichFunction& f, std::int64_t count, std::uint64_t seed) {
  const int v = f.vocab_size(), length = f.length();
  std::vector<Sequence> xs(static_cast<std::size_t>(std::min<std::int64_t>(count, 4096)));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    RandomStream rng(seed, StreamTag::kSampling, {i});
    xs[i].resize(static_cast<std::size_t>(length));
    for (auto& t : xs[i]) t = static_cast<Token>(rng.below(static_cast<std::uint64_t>(v)));
  }
  volatile double sink = 0.0;
  const auto t0 = Clock::now();
  for (std::int64_t i = 0; i < count; ++i)
    sink = sink + f.evaluate(xs[static_cast<std::size_t>(i) % xs.size()]);
  const double dt = seconds_since(t0);
  (void)sink;
  return dt > 0 ? static_cast<double>(count) / dt : std::numeric_limits<double>::infinity();
}

// Solver runs

GaRun record_ga_run(const EhrlichFunction& f, const GAConfig& ga, std::int64_t budget,
                    const std::string& run_id) {
  GaRun run;
  auto& rec = run.record;
  rec.run_id = run_id;
  rec.instance = f.name();
  rec.instance_seed = f.params().seed;
  rec.solver = "ga";
  rec.config_hash = config_hash(canonical_config(ga));
  rec.budget = budget;
  RunRecorder recorder(rec);
  const auto t0 = Clock::now();
  run.state = run_ga(f, ga, budget, [&](std::int64_t, std::int64_t round, const Sequence& s,
                                        double v) { recorder.add(round, s, v, nan()); });
  rec.duration_seconds = seconds_since(t0);
  rec.evals_per_second = measure_throughput(f, 20000);
  return run;
}

LlomeRun record_llome_run(const EhrlichFunction& f, const GAConfig& ga, const LoopConfig& loop,
                          double mutation_rate, const std::string& run_id) {
  const MutationProposer proposer(f.vocab_size(), f.length(), mutation_rate);
  return record_llome_run(f, ga, loop, proposer, "llome-baseline",
                          "mutation rate=" + format_score(mutation_rate), run_id);
}

LlomeRun record_llome_run(const EhrlichFunction& f, const GAConfig& ga, const LoopConfig& loop,
                          const ProposalGenerator& generator, const std::string& solver,
                          const std::string& generator_config, const std::string& run_id) {
  loop.validate();
  ga.validate();
  LlomeRun run;
  auto& rec = run.record;
  rec.run_id = run_id;
  rec.instance = f.name();
  rec.instance_seed = f.params().seed;
  rec.solver = solver;
  rec.config_hash = config_hash(canonical_config(ga, loop, generator_config));
  rec.budget = 1 + static_cast<std::int64_t>(loop.presolver_rounds) * ga.num_particles +
               static_cast<std::int64_t>(loop.rounds) * loop.evals_per_round;
  RunRecorder recorder(rec);
  const auto t0 = Clock::now();
  const auto pre = run_presolver(
      f, ga, loop.presolver_rounds, initial_solution(f),
      [&](std::int64_t, std::int64_t, const Sequence& s, double v) { recorder.add(0, s, v, nan()); });
  run.result = run_llome(f, generator, loop, pre,
                         [&](std::int64_t, std::int64_t round, const Sequence& s, double v,
                             double margin) { recorder.add(round, s, v, margin); });
  rec.duration_seconds = seconds_since(t0);
  rec.evals_per_second = measure_throughput(f, 20000);
  return run;
}

// Sweeps

SweepAxis parse_axis(const std::string& name) {
  if (name == "v") return SweepAxis::kV;
  if (name == "L") return SweepAxis::kL;
  if (name == "c") return SweepAxis::kC;
  if (name == "k") return SweepAxis::kK;
  if (name == "q") return SweepAxis::kQ;
  throw InvariantError("sweep-axis", "axis must be one of v, L, c, k, q (got '" + name + "')");
}

std::string axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kV: return "v";
    case SweepAxis::kL: return "L";
    case SweepAxis::kC: return "c";
    case SweepAxis::kK: return "k";
    case SweepAxis::kQ: return "q";
  }
  return "?";
}

std::vector<std::int64_t> default_checkpoints(std::int64_t first, std::int64_t budget, int count) {
  std::vector<std::int64_t> out;
  first = std::max<std::int64_t>(first, 1);
  if (budget <= first || count < 2) return {budget};
  const double ratio = std::log(static_cast<double>(budget) / static_cast<double>(first));
  for (int i = 0; i < count; ++i) {
    const auto c = static_cast<std::int64_t>(
        std::llround(static_cast<double>(first) * std::exp(ratio * i / (count - 1))));
    if (out.empty() || c > out.back()) out.push_back(c);
  }
  out.back() = budget;
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) return nan();
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SweepReport run_sweep(const SweepConfig& config) {
  if (config.values.empty()) throw InvariantError("sweep-values", "no sweep values given");
  if (config.seeds.empty()) throw InvariantError("sweep-seeds", "no seeds given");
  SweepReport report;
  report.axis = config.axis;
  report.checkpoints = config.checkpoints.empty()
                           ? default_checkpoints(1 + config.ga.num_particles, config.budget, 10)
                           : config.checkpoints;
  for (const int value : config.values) {
    EhrlichParams p = config.base;
    switch (config.axis) {
      case SweepAxis::kV: p.vocab_size = value; break;
      case SweepAxis::kL: p.length = value; break;
      case SweepAxis::kC: p.num_motifs = value; break;
      case SweepAxis::kK: p.motif_length = value; break;
      case SweepAxis::kQ: p.quantization = value; break;
    }
    SweepCell cell;
    cell.value = value;
    std::vector<RegretCurve> curves;
    for (const auto seed : config.seeds) {
      p.seed = seed;
      const auto f = EhrlichFunction::generate(p);
      cell.instance = f.name();
      GAConfig ga = config.ga;
      ga.seed = seed;
      RunRecord rec;
      RunRecorder recorder(rec);
      run_ga(f, ga, config.budget, [&](std::int64_t, std::int64_t round, const Sequence& s,
                                       double v) { recorder.add(round, s, v, nan()); });
      curves.push_back(regret_curve(rec));
      cell.final_regret.push_back(curves.back().back().min_regret);
    }
    cell.median_final_regret = median(cell.final_regret);
    for (const auto c : report.checkpoints) {
      std::vector<double> at;
      for (const auto& curve : curves) at.push_back(curve_at(curve, c));
      cell.median_curve.push_back({c, median(at)});
    }
    cell.hypervolume = hypervolume(cell.median_curve);
    report.cells.push_back(std::move(cell));
  }
  return report;
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
  out << "# ehrlich-sweep v" << kRunSchemaVersion << " axis=" << axis_name(report.axis) << '\n'
      << "value,instance,evals,median_min_regret,hypervolume\n";
  for (const auto& cell : report.cells)
    for (const auto& p : cell.median_curve)
      out << cell.value << ',' << cell.instance << ',' << p.evals << ','
          << format_score(p.min_regret) << ',' << format_score(cell.hypervolume) << '\n';
}

// Loss batches

void write_loss_batch_csv(std::ostream& out, const LossBatch& batch) {
  out << "x_id,y_id,log_pi_theta,log_pi_ref,reward,length\n";
  for (const auto& r : batch)
    out << r.x_id << ',' << r.y_id << ',' << format_score(r.log_pi_theta) << ','
        << format_score(r.log_pi_ref) << ',' << format_score(r.reward) << ','
        << format_score(r.length) << '\n';
}

LossBatch read_loss_batch_csv(std::istream& in) {
  LossBatch batch;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#' || line.rfind("x_id,", 0) == 0) continue;
    const auto cols = split(line, ',');
    LossRecord r;
    if (cols.size() != 6 || !parse_number(cols[0], r.x_id) || !parse_number(cols[1], r.y_id) ||
        !parse_number(cols[2], r.log_pi_theta) || !parse_number(cols[3], r.log_pi_ref) ||
        !parse_number(cols[4], r.reward) || !parse_number(cols[5], r.length))
      csv_error("loss-csv", lineno, "malformed row");
    if (!(r.length > 0)) csv_error("loss-csv", lineno, "length must be positive");
    batch.push_back(r);
  }
  return batch;
}

}  // namespace ehrlich
