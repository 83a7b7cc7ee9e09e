#pragma once

// Executes a Scenario: dispatches to bounds/solver/control, evaluates the declared
// checks, writes column files and summary.json into the output directory.

#include "inclusol/scenario.hpp"

#include "json.hpp"

#include <cstdio>
#include <filesystem>

namespace inclusol {

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct RunReport {
  std::string output_dir;
  std::vector<Check> checks;
  nlohmann::ordered_json summary;

  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  }
  int exit_status() const { return pass() ? 0 : 1; }
  std::vector<std::string> failed() const {
    std::vector<std::string> out;
    for (const auto& c : checks) {
      if (!c.pass) out.push_back(c.name);
    }
    return out;
  }
};

/// Reference solution of x' = f(t,x) + y with the history carried as an extra state:
/// linear kernels (y' = scale x), decaying kernels (y' = scale x - rate y) and
/// t-independent forcing (y' = f(t)). Classical RK4 with `steps` steps.
inline std::vector<Vector> rk4_reference(const Scenario& s, const ProblemSpec& spec, long long steps) {
  const Eigen::Index D = spec.dimension();
  const KernelDecl& k = s.kernel;
  if (!std::holds_alternative<SingletonMap>(spec.F)) throw std::invalid_argument("oracle needs a single-valued F");
  std::vector<Expression> forcing;
  if (k.type == "forcing") {
    for (const auto& v : k.values) {
      forcing.emplace_back(v);
      if (forcing.back().uses_t()) throw std::invalid_argument("oracle needs forcing independent of t");
    }
  } else if (k.type != "zero" && k.type != "linear" && k.type != "decaying") {
    throw std::invalid_argument("oracle unsupported for kernel '" + k.type + "'");
  }
  const auto& f = std::get<SingletonMap>(spec.F).f;
  auto rhs = [&](double t, const Vector& z) {
    Vector x = z.head(D), y = z.tail(D);
    Vector dz(2 * D);
    dz.head(D) = f(t, x) + y;
    if (k.type == "linear") dz.tail(D) = k.scale * x;
    else if (k.type == "decaying") dz.tail(D) = k.scale * x - k.rate * y;
    else if (k.type == "forcing") {
      for (Eigen::Index i = 0; i < D; ++i) dz[D + i] = forcing[static_cast<std::size_t>(i)](t, t);
    } else {
      dz.tail(D).setZero();
    }
    return dz;
  };
  const double T = spec.grid.horizon();
  const double h = T / static_cast<double>(steps);
  Vector z = Vector::Zero(2 * D);
  z.head(D) = spec.x0;
  std::vector<Vector> out{z.head(D)};
  for (long long n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * h;
    Vector k1 = rhs(t, z);
    Vector k2 = rhs(t + 0.5 * h, z + 0.5 * h * k1);
    Vector k3 = rhs(t + 0.5 * h, z + 0.5 * h * k2);
    Vector k4 = rhs(t + h, z + h * k3);
    z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    out.push_back(z.head(D));
  }
  return out;
}

struct RunOptions {
  std::optional<long long> steps;
  std::optional<std::vector<long long>> dims;
  std::optional<std::uint64_t> seed;
  std::string output;  ///< overrides the scenario's output directory
};

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

class ColumnFile {
 public:
  ColumnFile(const std::filesystem::path& path, const std::vector<std::string>& columns) : f_(std::fopen(path.c_str(), "w")) {
    if (!f_) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < columns.size(); ++i) std::fprintf(f_, i ? " %s" : "%s", columns[i].c_str());
    std::fprintf(f_, "\n");
  }
  ColumnFile(const ColumnFile&) = delete;
  ColumnFile& operator=(const ColumnFile&) = delete;
  ~ColumnFile() {
    if (f_) std::fclose(f_);
  }
  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) std::fprintf(f_, i ? " %.16e" : "%.16e", values[i]);
    std::fprintf(f_, "\n");
  }

 private:
  std::FILE* f_;
};

inline std::vector<std::string> indexed(const std::string& stem, Eigen::Index n) {
  std::vector<std::string> out;
  for (Eigen::Index i = 1; i <= n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  const Eigen::Index D = traj.dimension();
  std::vector<std::string> cols{"t"};
  for (auto& c : indexed("x", D)) cols.push_back(c);
  for (auto& c : indexed("v", D)) cols.push_back(c);
  ColumnFile out(path, cols);
  const std::size_t N = traj.grid().steps();
  for (std::size_t k = 0; k <= N; ++k) {
    std::vector<double> row{traj.grid().node(k)};
    const Vector& x = traj.state(k);
    const Vector& v = traj.velocity(std::min(k, N - 1));
    row.insert(row.end(), x.data(), x.data() + D);
    row.insert(row.end(), v.data(), v.data() + D);
    out.row(row);
  }
}

inline void write_bounds(const std::filesystem::path& path, const BoundTable& b) {
  std::vector<std::string> cols{"t", "r", "psi"};
  if (b.m) cols.push_back("m");
  ColumnFile out(path, cols);
  for (std::size_t k = 0; k < b.r.size(); ++k) {
    std::vector<double> row{b.grid.node(k), b.r[k], b.psi[k]};
    if (b.m) row.push_back((*b.m)[k]);
    out.row(row);
  }
}

struct Runner {
  const Scenario& s;
  Model model;
  std::filesystem::path dir;
  RunReport report;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();

  void check(const std::string& name, bool pass, const std::string& detail) {
    report.checks.push_back({name, pass, detail});
  }

  /// Envelope refinement: the fine grid is capped near 2048 cells; the measured
  /// quadrature slack accounts for what the coarser quadrature misses.
  std::size_t refine() const {
    return std::clamp<std::size_t>(2048 / static_cast<std::size_t>(s.steps), 1, kDefaultRefinement);
  }

  SolverConfig config(Scheme scheme) const {
    SolverConfig cfg;
    cfg.quad_refine = refine();
    cfg.scheme = scheme;
    for (long long n : s.run.dims) cfg.dims.push_back(static_cast<Eigen::Index>(n));
    cfg.tol_projection = s.run.tol_projection;
    return cfg;
  }

  Scheme scheme() const {
    const std::string& name = s.run.scheme;
    if (name == "cascade") return Scheme::Cascade;
    if (name == "catchingUp") return Scheme::CatchingUp;
    if (name == "reduced") return Scheme::Reduced;
    if (name == "euler") return Scheme::Euler;
    return model.spec.C ? Scheme::CatchingUp : Scheme::Euler;
  }

  BoundTable bounds() {
    const ProblemSpec& spec = model.spec;
    if (!spec.C) return envelopes(spec, refine());
    BoundTable b = sweeping_envelopes(spec, PicardOptions{1e-10, 200, refine()});
    const auto& res = b.picard_residuals;
    bool geometric = true;
    for (std::size_t i = 1; i < res.size(); ++i) {
      if (res[i - 1] > 1e-13 && !(res[i] < res[i - 1])) geometric = false;
    }
    metrics["picard_iterations"] = res.size();
    metrics["picard_residual"] = res.empty() ? 0.0 : res.back();
    check("picard", geometric, std::to_string(res.size()) + " iterations, final residual " +
                                   fmt(res.empty() ? 0.0 : res.back()));
    if (std::isfinite(spec.alpha_far.rho)) {
      auto pieces = horizon_split(spec, b.psi_table());
      metrics["sub_horizons"] = pieces.size();
    }
    return b;
  }

  void compliance(const Trajectory& traj, const BoundTable& b, const std::string& label = "check_bounds") {
    const double tol = s.run.bounds_tolerance + quadrature_slack(model.spec, b, refine());
    BoundsReport rep = check_bounds(traj, b, tol);
    metrics[label + "_state_margin"] = rep.state_margin;
    metrics[label + "_velocity_margin"] = rep.velocity_margin;
    check(label, rep.compliant(), std::to_string(rep.violations) + " violations at tolerance " + fmt(tol));
  }

  void exact_solution(const Trajectory& traj) {
    if (s.run.exact.empty()) return;
    auto exact = detail::exprs(s.run.exact, s.dimension, "exact");
    double err = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) {
      err = std::max(err, (traj.state(k) - eval_all(exact, traj.grid().node(k))).norm());
    }
    const double limit = s.run.exact_tolerance_h * traj.grid().max_step();
    metrics["exact_error"] = err;
    check("exact_solution", err <= limit, "sup error " + fmt(err) + " against " + fmt(limit));
  }

  void oracle(const Trajectory& traj) {
    if (s.run.oracle.empty()) return;
    if (s.run.oracle != "rk4") throw std::invalid_argument("unknown oracle '" + s.run.oracle + "'");
    const long long N = static_cast<long long>(traj.grid().steps());
    if (s.run.oracle_steps % N != 0) throw std::invalid_argument("oracle steps must be a multiple of steps");
    auto ref = rk4_reference(s, model.spec, s.run.oracle_steps);
    const auto ratio = static_cast<std::size_t>(s.run.oracle_steps / N);
    double gap = 0.0;
    for (std::size_t k = 0; k < traj.size(); ++k) gap = std::max(gap, (traj.state(k) - ref[k * ratio]).norm());
    metrics["oracle_gap"] = gap;
    check("oracle_gap", gap < s.run.oracle_tolerance, "sup gap " + fmt(gap));
  }

  void study(Scheme scheme) {
    if (s.run.study.empty()) return;
    ConvergenceStudy st = convergence_study(model.spec, config(scheme), s.run.study);
    {
      ColumnFile out(dir / "study.dat", {"N", "gap"});
      for (std::size_t i = 0; i < st.gaps.size(); ++i) out.row({static_cast<double>(st.steps[i]), st.gaps[i]});
    }
    if (st.exact) {
      metrics["order"] = "exact";
      check("convergence_order", true, "all gaps vanish");
      return;
    }
    metrics["order"] = st.order ? nlohmann::ordered_json(*st.order) : nlohmann::ordered_json(nullptr);
    const bool ok = st.order && *st.order >= s.run.order_range[0] && *st.order <= s.run.order_range[1];
    check("convergence_order", ok, st.order ? "order " + fmt(*st.order) : "order undetermined");
  }

  void uniqueness(const Trajectory& traj) {
    if (s.run.second_start.empty()) return;
    ProblemSpec other = model.spec;
    other.x0 = to_vector(s.run.second_start);
    Trajectory second = solve_idi(other, config(Scheme::Euler));
    CauchyDiagnostics diag = uniqueness_gap(traj, second, model.spec.envelope);
    {
      ColumnFile out(dir / "uniqueness.dat", {"t", "vartheta", "bound", "slack"});
      for (std::size_t k = 0; k < diag.vartheta.size(); ++k) {
        out.row({traj.grid().node(k), diag.vartheta[k], diag.pi_bound[k], diag.slack});
      }
    }
    check("uniqueness_bound", diag.violations == 0, std::to_string(diag.violations) + " violations");
    if (s.run.nonincreasing) {
      check("uniqueness_nonincreasing", diag.increase <= 1e-9, "largest increase " + fmt(diag.increase));
    }
  }

  void solve() {
    const ProblemSpec& spec = model.spec;
    BoundTable b = bounds();
    write_bounds(dir / "bounds.dat", b);
    Scheme sch = scheme();
    if (sch == Scheme::Cascade) {
      CascadeResult res = solve_galerkin_cascade(spec, config(sch));
      const Eigen::Index D = spec.dimension();
      for (std::size_t i = 0; i < res.trajectories.size(); ++i) {
        compliance(res.trajectories[i], b, "check_bounds_n" + std::to_string(res.dims[i]));
      }
      {
        std::vector<std::string> cols{"t"};
        for (const auto& p : res.diagnostics.pairs) {
          cols.push_back("theta_" + std::to_string(p.n) + "_" + std::to_string(p.m));
          cols.push_back("bound_" + std::to_string(p.n) + "_" + std::to_string(p.m));
        }
        ColumnFile out(dir / "theta.dat", cols);
        for (std::size_t k = 0; k <= spec.grid.steps(); ++k) {
          std::vector<double> row{spec.grid.node(k)};
          for (const auto& p : res.diagnostics.pairs) {
            row.push_back(p.theta[k]);
            row.push_back(p.bound[k]);
          }
          out.row(row);
        }
      }
      check("cascade_theta", res.diagnostics.violations == 0,
            std::to_string(res.diagnostics.violations) + " violations over " +
                std::to_string(res.diagnostics.pairs.size()) + " pairs");
      if (res.dims.back() == D) {
        const Trajectory& full = res.trajectories.back();
        ColumnFile out(dir / "galerkin_gaps.dat", {"n", "gap"});
        bool decreasing = true;
        double prev = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < res.trajectories.size(); ++i) {
          double gap = sup_distance(res.trajectories[i], full);
          out.row({static_cast<double>(res.dims[i]), gap});
          if (!(gap < prev)) decreasing = false;
          prev = gap;
        }
        check("cascade_monotone", decreasing, "gap to full rank strictly decreasing in n");
        Trajectory direct = solve_idi(spec, config(Scheme::Euler));
        bool same = true;
        for (std::size_t k = 0; k < direct.size(); ++k) same = same && (direct.state(k).array() == full.state(k).array()).all();
        check("cascade_full_rank", same, "rank D reproduces the direct solve");
      }
      write_trajectory(dir / "trajectory.dat", res.trajectories.back());
      exact_solution(res.trajectories.back());
      oracle(res.trajectories.back());
      return;
    }
    Trajectory traj = solve_idi(spec, config(Scheme::Euler));
    write_trajectory(dir / "trajectory.dat", traj);
    compliance(traj, b);
    oracle(traj);
    exact_solution(traj);
    uniqueness(traj);
    study(Scheme::Euler);
  }

  void sweep() {
    const ProblemSpec& spec = model.spec;
    BoundTable b = bounds();
    write_bounds(dir / "bounds.dat", b);
    Scheme sch = scheme();
    SolverConfig cfg = config(sch);
    Trajectory traj = sch == Scheme::Reduced ? solve_reduced(spec, cfg, b) : solve_sweeping(spec, cfg);
    write_trajectory(dir / "trajectory.dat", traj);
    compliance(traj, b);
    const bool lagged = sch != Scheme::Reduced;
    ViolationTable viol = constraint_violation(traj, *spec.C, lagged ? ViolationMode::Lagged : ViolationMode::Current);
    {
      ColumnFile out(dir / "violation.dat", {"t", "distance"});
      for (std::size_t k = 0; k < viol.values.size(); ++k) out.row({traj.grid().node(k), viol.values[k]});
    }
    metrics["constraint_violation"] = viol.max;
    if (lagged) {
      check("constraint_violation", viol.max <= s.run.tol_projection, "max distance " + fmt(viol.max));
    }
    exact_solution(traj);
    study(sch);
    if (s.run.compare_schemes) compare_schemes();
  }

  /// Catching-up against the reduced scheme on every study grid.
  void compare_schemes() {
    if (s.run.study.size() < 2) throw std::invalid_argument("compare_schemes needs study grids");
    ColumnFile out(dir / "schemes.dat", {"N", "gap", "violation_reduced", "violation_catching_up"});
    bool gaps_down = true, viol_down = true;
    double prev_gap = std::numeric_limits<double>::infinity(), prev_viol = prev_gap;
    for (long long N : s.run.study) {
      ProblemSpec p = model.spec;
      p.grid = make_grid(p.grid.horizon(), N);
      Trajectory cu = solve_sweeping(p, config(Scheme::CatchingUp));
      Trajectory rd = solve_reduced(p, config(Scheme::Reduced), sweeping_envelopes(p, PicardOptions{1e-10, 200, refine()}));
      double gap = sup_distance(cu, rd);
      double vr = constraint_violation(rd, *p.C).max;
      double vc = constraint_violation(cu, *p.C, ViolationMode::Lagged).max;
      out.row({static_cast<double>(N), gap, vr, vc});
      if (!(gap < prev_gap)) gaps_down = false;
      if (!(vr < prev_viol) && !(vr == 0.0 && prev_viol == 0.0)) viol_down = false;
      prev_gap = gap;
      prev_viol = vr;
    }
    check("scheme_agreement", gaps_down, "sup gap decreasing across the study grids");
    check("reduced_violation", viol_down, "reduced-scheme violation decreasing across the study grids");
  }

  void bounds_only() {
    BoundTable b = bounds();
    write_bounds(dir / "bounds.dat", b);
    bool finite = true;
    for (std::size_t k = 0; k < b.r.size(); ++k) finite = finite && std::isfinite(b.r[k]) && std::isfinite(b.psi[k]);
    metrics["r_T"] = b.r.back();
    metrics["psi_max"] = *std::max_element(b.psi.begin(), b.psi.end());
    check("bounds_finite", finite, "r and psi finite on the grid");
  }

  void control() {
    const ControlProblem& P = *model.control;
    const ControlDecl& c = *s.control;
    OptimizeOptions opt;
    opt.starts = static_cast<std::size_t>(c.starts);
    opt.iterations = static_cast<std::size_t>(c.iterations);
    opt.seed = s.run.seed;
    OptimizeResult res = optimize(P, opt);
    write_trajectory(dir / "trajectory.dat", res.trajectory);
    {
      std::vector<std::string> cols{"t"};
      for (auto& n : indexed("u", P.control_dimension())) cols.push_back(n);
      ColumnFile out(dir / "control.dat", cols);
      for (std::size_t j = 0; j < res.control.values.size(); ++j) {
        std::vector<double> row{res.control.grid.node(j)};
        row.insert(row.end(), res.control.values[j].data(), res.control.values[j].data() + res.control.values[j].size());
        out.row(row);
      }
    }
    {
      ColumnFile out(dir / "optimizer.log", {"iteration", "cost", "gradient_norm"});
      for (const auto& e : res.log) out.row({static_cast<double>(e.iteration), e.cost, e.gradient_norm});
    }
    metrics["cost"] = res.cost;
    metrics["gradient_norm"] = res.gradient_norm;
    metrics["iterations"] = res.log.size();
    bool descent = true;
    for (std::size_t i = 1; i < res.log.size(); ++i) descent = descent && res.log[i].cost <= res.log[i - 1].cost;
    check("optimizer_descent", descent, "recorded costs nonincreasing");
    bool feasible = true;
    try {
      res.control.validate(P.U);
    } catch (const std::invalid_argument&) {
      feasible = false;
    }
    check("control_feasible", feasible, "every control value in U");
    check("line_search", !res.line_search_failed, res.message.empty() ? "ok" : res.message);
    if (c.reference_cost) {
      const double ref = *c.reference_cost;
      const double rel = std::abs(res.cost - ref) / std::abs(ref);
      metrics["reference_relative_gap"] = rel;
      check("optimizer_reference", rel <= c.reference_tolerance, "relative gap " + fmt(rel));
    }
    compliance(res.trajectory, envelopes(P.dynamics, refine()));
  }

  void probe() {
    const ProbeDecl& d = *s.probe;
    WeakProbeOptions opt;
    opt.horizon = s.horizon;
    opt.cells = static_cast<std::size_t>(d.cells);
    opt.high = to_vector(d.high);
    opt.low = to_vector(d.low);
    const Eigen::Index D = s.dimension;
    opt.state = [D](double) -> Vector { return Vector::Zero(D); };
    opt.modes.clear();
    for (long long n : d.modes) {
      if (n < 1) throw std::invalid_argument("modes must be positive");
      opt.modes.push_back(static_cast<std::size_t>(n));
    }
    WeakProbeResult res = weak_continuity_probe(model.spec.g, opt);
    {
      ColumnFile out(dir / "probe.dat", {"n", "sup_residual", "terminal_residual"});
      for (std::size_t i = 0; i < res.modes.size(); ++i) {
        out.row({static_cast<double>(res.modes[i]), res.sup_residual[i], res.terminal_residual[i]});
      }
    }
    metrics["flagged"] = res.flagged;
    metrics["monotone"] = res.monotone;
    check("probe_flag", res.flagged == d.expect_flagged,
          std::string(res.flagged ? "flagged" : "not flagged") + ", expected " + (d.expect_flagged ? "flagged" : "not flagged"));
    if (!d.expect_flagged) check("probe_monotone", res.monotone, "residuals decreasing in n");
  }

  void study_only() {
    Scheme sch = scheme();
    if (s.run.study.empty()) throw std::invalid_argument("study command needs study grids");
    study(sch);
  }
};

}  // namespace detail

/// Runs the scenario; component failures become a failed check named after the stage.
inline RunReport run_scenario(Scenario s, const RunOptions& opt = {}) {
  if (opt.steps) s.steps = *opt.steps;
  if (opt.dims) s.run.dims = *opt.dims;
  if (opt.seed) s.run.seed = *opt.seed;
  std::string out = opt.output;
  if (out.empty()) out = s.output;
  if (out.empty()) {
    const char* env = std::getenv("INCLUSOL_OUT");
    out = (env && *env) ? (std::filesystem::path(env) / s.name).string() : (std::filesystem::path("inclusol-out") / s.name).string();
  }
  std::filesystem::create_directories(out);

  detail::Runner r{s, Model{}, out, {}};
  r.report.output_dir = out;
  try {
    detail::validate_scenario(s);
    r.model = build_model(s);
    {
      std::ofstream f(r.dir / "scenario.yaml");
      f << serialize(s);
    }
    const std::string& cmd = s.run.command;
    if (cmd == "solve") r.solve();
    else if (cmd == "sweep") r.sweep();
    else if (cmd == "bounds") r.bounds_only();
    else if (cmd == "control") r.control();
    else if (cmd == "probe") r.probe();
    else r.study_only();
  } catch (const std::exception& e) {
    r.check(s.run.command, false, e.what());
  }

  auto& j = r.report.summary;
  j["name"] = s.name;
  j["command"] = s.run.command;
  j["steps"] = s.steps;
  j["pass"] = r.report.pass();
  j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : r.report.checks) j["checks"].push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  j["metrics"] = r.metrics;
  std::ofstream f(r.dir / "summary.json");
  f << j.dump(2) << "\n";
  return r.report;
}

}  // namespace inclusol
