#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ehrlich/ehrlich.hpp"
#include "ehrlich/ga.hpp"
#include "ehrlich/harness.hpp"
#include "ehrlich/instance_io.hpp"
#include "ehrlich/llome.hpp"
#include "ehrlich/losses.hpp"

namespace py = pybind11;
using namespace ehrlich;

namespace {

std::vector<Sequence> rows_of(const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw InvariantError("array-shape", "expected a 2-d array of tokens");
  const auto n = a.shape(0), L = a.shape(1);
  std::vector<Sequence> out(static_cast<std::size_t>(n));
  const auto* data = a.data();
  for (py::ssize_t i = 0; i < n; ++i) out[i].assign(data + i * L, data + (i + 1) * L);
  return out;
}

py::dict ga_result(const GAState& s) {
  py::dict d;
  d["best_sequence"] = s.incumbent.sequence;
  d["best_value"] = s.incumbent.value;
  d["evals"] = s.evals_used;
  d["steps"] = s.steps;
  std::vector<std::pair<std::int64_t, double>> hist;
  for (const auto& h : s.history) hist.emplace_back(h.eval_index, h.best_value);
  d["history"] = hist;
  return d;
}

py::dict round_dict(const RoundStats& r) {
  py::dict d;
  d["round"] = r.round;
  d["evals"] = r.evals;
  d["total_evals"] = r.total_evals;
  d["min_regret"] = r.min_regret;
  d["mean_regret"] = r.mean_regret;
  d["feasible_fraction"] = r.feasible_fraction;
  d["unique_fraction"] = r.unique_fraction;
  d["mean_margin"] = r.mean_margin;
  d["max_margin"] = r.max_margin;
  d["mean_hamming"] = r.mean_hamming;
  d["temperature_shift"] = r.temperature_shift;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Ehrlich functions, GA and LLOME baselines, preference-loss numerics";

  py::register_exception<InvariantError>(m, "InvariantError", PyExc_ValueError);
  py::register_exception<SolverAbort>(m, "SolverAbort", PyExc_RuntimeError);

  py::class_<EhrlichParams>(m, "EhrlichParams")
      .def(py::init<>())
      .def_readwrite("vocab_size", &EhrlichParams::vocab_size)
      .def_readwrite("length", &EhrlichParams::length)
      .def_readwrite("num_motifs", &EhrlichParams::num_motifs)
      .def_readwrite("motif_length", &EhrlichParams::motif_length)
      .def_readwrite("quantization", &EhrlichParams::quantization)
      .def_readwrite("epistasis", &EhrlichParams::epistasis)
      .def_readwrite("temperature", &EhrlichParams::temperature)
      .def_readwrite("feasible_fraction", &EhrlichParams::feasible_fraction)
      .def_readwrite("seed", &EhrlichParams::seed)
      .def("validate", &EhrlichParams::validate)
      .def("name", &EhrlichParams::name)
      .def("__repr__", [](const EhrlichParams& p) {
        return "<EhrlichParams " + p.name() + " seed=" + std::to_string(p.seed) + ">";
      });

  m.def("parse_name", &parse_name, py::arg("name"));

  py::class_<EhrlichFunction>(m, "EhrlichFunction")
      .def_static("generate", &EhrlichFunction::generate, py::arg("params"))
      .def_static(
          "from_name",
          [](const std::string& name, std::uint64_t seed) {
            auto p = parse_name(name);
            p.seed = seed;
            return EhrlichFunction::generate(p);
          },
          py::arg("name"), py::arg("seed") = 0)
      .def_static("from_json", &parse_instance, py::arg("document"))
      .def("to_json", [](const EhrlichFunction& f) { return serialize_instance(f); })
      .def_property_readonly("params", &EhrlichFunction::params)
      .def_property_readonly("name", &EhrlichFunction::name)
      .def_property_readonly("vocab_size", &EhrlichFunction::vocab_size)
      .def_property_readonly("length", &EhrlichFunction::length)
      .def_property_readonly("optimum", &EhrlichFunction::optimum)
      .def_property_readonly("motifs", [](const EhrlichFunction& f) { return f.motifs().motifs; })
      .def_property_readonly("offsets", [](const EhrlichFunction& f) { return f.motifs().offsets; })
      .def_property_readonly("transition_matrix",
                             [](const EhrlichFunction& f) {
                               const auto& t = f.transition();
                               py::array_t<double> a({t.size, t.size});
                               std::copy(t.entries.begin(), t.entries.end(), a.mutable_data());
                               return a;
                             })
      .def("__call__", [](const EhrlichFunction& f, const Sequence& x) { return f.evaluate(x); })
      .def("evaluate", [](const EhrlichFunction& f, const Sequence& x) { return f.evaluate(x); })
      .def("feasible", [](const EhrlichFunction& f, const Sequence& x) { return f.feasible(x); })
      .def("regret", [](const EhrlichFunction& f, const Sequence& x) { return regret(f, x); })
      .def(
          "evaluate_batch",
          [](const EhrlichFunction& f,
             const py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>& a,
             int threads) {
            const auto rows = rows_of(a);
            std::vector<double> out;
            {
              py::gil_scoped_release release;
              out = f.evaluate_batch(rows, threads);
            }
            return py::array_t<double>(static_cast<py::ssize_t>(out.size()), out.data());
          },
          py::arg("sequences"), py::arg("threads") = 1)
      .def("initial_solution", [](const EhrlichFunction& f) { return initial_solution(f); })
      .def("__repr__", [](const EhrlichFunction& f) {
        return "<EhrlichFunction " + f.name() + " seed=" + std::to_string(f.params().seed) + ">";
      });

  m.def("sample_dmp",
        [](const EhrlichFunction& f, int length, std::uint64_t seed) {
          return sample_dmp(f.transition(), length, seed);
        },
        py::arg("function"), py::arg("length"), py::arg("seed"));

  py::class_<GAConfig>(m, "GAConfig")
      .def(py::init<>())
      .def_readwrite("num_particles", &GAConfig::num_particles)
      .def_readwrite("survival_quantile", &GAConfig::survival_quantile)
      .def_readwrite("mutation_prob", &GAConfig::mutation_prob)
      .def_readwrite("recombination_prob", &GAConfig::recombination_prob)
      .def_readwrite("seed", &GAConfig::seed)
      .def_readwrite("threads", &GAConfig::threads)
      .def("validate", &GAConfig::validate);

  m.def(
      "run_ga",
      [](const EhrlichFunction& f, const GAConfig& config, std::int64_t budget) {
        GAState s;
        {
          py::gil_scoped_release release;
          s = run_ga(f, config, budget);
        }
        return ga_result(s);
      },
      py::arg("function"), py::arg("config"), py::arg("budget"));

  py::class_<LoopConfig>(m, "LoopConfig")
      .def(py::init<>())
      .def_readwrite("rounds", &LoopConfig::rounds)
      .def_readwrite("evals_per_round", &LoopConfig::evals_per_round)
      .def_readwrite("presolver_rounds", &LoopConfig::presolver_rounds)
      .def_readwrite("seeds_per_round", &LoopConfig::seeds_per_round)
      .def_readwrite("refine_iters", &LoopConfig::refine_iters)
      .def_readwrite("samples_per_iter", &LoopConfig::samples_per_iter)
      .def_readwrite("base_temperatures", &LoopConfig::base_temperatures)
      .def_readwrite("min_loglik_per_token", &LoopConfig::min_loglik_per_token)
      .def_readwrite("max_infeasible_fraction", &LoopConfig::max_infeasible_fraction)
      .def_readwrite("distance_threshold", &LoopConfig::distance_threshold)
      .def_readwrite("num_neighbors", &LoopConfig::num_neighbors)
      .def_readwrite("adjust_temperature", &LoopConfig::adjust_temperature)
      .def_readwrite("seed", &LoopConfig::seed)
      .def("validate", &LoopConfig::validate);

  m.def("default_mutation_rate", &default_mutation_rate, py::arg("length"));

  m.def(
      "run_llome",
      [](const EhrlichFunction& f, const GAConfig& ga, const LoopConfig& loop,
         double mutation_rate) {
        const double rate = mutation_rate > 0 ? mutation_rate : default_mutation_rate(f.length());
        LlomeRun run;
        {
          py::gil_scoped_release release;
          run = record_llome_run(f, ga, loop, rate, "python");
        }
        py::dict d;
        d["best_sequence"] = run.result.best.sequence;
        d["best_value"] = run.result.best.value;
        d["presolver_evals"] = run.result.presolver_evals;
        d["presolver_min_regret"] = run.result.presolver_min_regret;
        d["total_evals"] = run.result.total_evals;
        py::list rounds;
        for (const auto& r : run.result.rounds) rounds.append(round_dict(r));
        d["rounds"] = rounds;
        std::vector<std::pair<std::int64_t, double>> curve;
        for (const auto& p : regret_curve(run.record)) curve.emplace_back(p.evals, p.min_regret);
        d["regret_curve"] = curve;
        return d;
      },
      py::arg("function"), py::arg("ga"), py::arg("loop"), py::arg("mutation_rate") = 0.0);

  m.def(
      "format_dataset",
      [](const std::vector<Sequence>& xs, const std::vector<double>& values, bool triples,
         double delta_x, int k_n) {
        if (xs.size() != values.size())
          throw InvariantError("dataset", "sequences and values differ in length");
        std::vector<ScoredSequence> scored;
        for (std::size_t i = 0; i < xs.size(); ++i) scored.push_back({xs[i], values[i]});
        const auto d = format_dataset(scored, triples ? DatasetMode::kTriples : DatasetMode::kPairs,
                                      delta_x, k_n);
        py::dict out;
        std::vector<Sequence> items;
        for (const auto& s : d.items) items.push_back(s.sequence);
        out["items"] = items;
        out["pairs"] = d.pairs;
        out["triples"] = d.triples;
        return out;
      },
      py::arg("sequences"), py::arg("values"), py::arg("triples") = false,
      py::arg("delta_x") = 0.25, py::arg("num_neighbors") = 30);

  m.def("adjust_temperatures", &adjust_temperatures, py::arg("base"), py::arg("mean_hamming"));

  // Losses
  m.def("margin_reward", &margin_reward, py::arg("f_x"), py::arg("f_y"));
  m.def(
      "boltzmann_target",
      [](const std::vector<double>& r, double beta) { return boltzmann_target(r, beta); },
      py::arg("rewards"), py::arg("beta") = 1.0);
  m.def(
      "kl_divergence",
      [](const std::vector<double>& p, const std::vector<double>& q) { return kl_divergence(p, q); },
      py::arg("p"), py::arg("q"));

  py::class_<LossRecord>(m, "LossRecord")
      .def(py::init([](int x, int y, double lt, double lr, double r, double n) {
             return LossRecord{x, y, lt, lr, r, n};
           }),
           py::arg("x_id") = 0, py::arg("y_id") = 0, py::arg("log_pi_theta") = 0.0,
           py::arg("log_pi_ref") = 0.0, py::arg("reward") = 0.0, py::arg("length") = 1.0)
      .def_readwrite("log_pi_theta", &LossRecord::log_pi_theta)
      .def_readwrite("log_pi_ref", &LossRecord::log_pi_ref)
      .def_readwrite("reward", &LossRecord::reward)
      .def_readwrite("length", &LossRecord::length);

  m.def("marge_loss", &marge_loss, py::arg("batch"), py::arg("lam"), py::arg("beta") = 1.0);
  m.def("marge_loss_grad", &marge_loss_grad, py::arg("batch"), py::arg("lam"),
        py::arg("beta") = 1.0);
  m.def("reinforce_loss", &reinforce_loss, py::arg("batch"), py::arg("lam"));
  m.def("reinforce_loss_grad", &reinforce_loss_grad, py::arg("batch"), py::arg("lam"));

  py::class_<PreferenceTriple>(m, "PreferenceTriple")
      .def(py::init([](double lt_w, double lr_w, double lt_l, double lr_l) {
             PreferenceTriple t;
             t.log_pi_theta_w = lt_w;
             t.log_pi_ref_w = lr_w;
             t.log_pi_theta_l = lt_l;
             t.log_pi_ref_l = lr_l;
             return t;
           }),
           py::arg("log_pi_theta_w"), py::arg("log_pi_ref_w"), py::arg("log_pi_theta_l"),
           py::arg("log_pi_ref_l"));
  m.def(
      "dpo_loss",
      [](const std::vector<PreferenceTriple>& t, double beta) { return dpo_loss(t, beta); },
      py::arg("triples"), py::arg("beta") = 1.0);

  m.def(
      "frekl_objective",
      [](const std::vector<double>& pi, const std::vector<double>& star,
         const std::vector<double>& ref, double lam) {
        return frekl_objective(pi, star, ref, lam);
      },
      py::arg("pi"), py::arg("pi_star"), py::arg("pi_ref"), py::arg("lam"));
  m.def(
      "solve_frekl",
      [](const std::vector<double>& star, const std::vector<double>& ref, double lam, double tol) {
        const auto s = solve_frekl(star, ref, lam, tol);
        py::dict d;
        d["policy"] = s.policy;
        d["objective"] = s.objective;
        d["residual"] = s.residual;
        d["iterations"] = s.iterations;
        return d;
      },
      py::arg("pi_star"), py::arg("pi_ref"), py::arg("lam"), py::arg("tolerance") = 1e-10);
  m.def(
      "translation_invariance_deviation",
      [](const std::vector<double>& f, double beta, bool clipped) {
        return translation_invariance_deviation(f, beta, clipped);
      },
      py::arg("f_values"), py::arg("beta") = 1.0, py::arg("clipped") = false);

  m.def(
      "hypervolume",
      [](const std::vector<std::pair<std::int64_t, double>>& points) {
        std::vector<CurvePoint> pts;
        for (const auto& [b, r] : points) pts.push_back({b, r});
        return hypervolume(pts);
      },
      py::arg("points"));
  m.def("measure_throughput", &measure_throughput, py::arg("function"), py::arg("count"),
        py::arg("seed") = 0);
}
