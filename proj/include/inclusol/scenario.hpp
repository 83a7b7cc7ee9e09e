#pragma once

// Scenario files: a YAML declaration of one problem and the run to perform on it.
// The declaration is kept as plain data (so it round-trips through serialize) and is
// compiled into a ProblemSpec / ControlProblem by build_model.

#include "inclusol/control.hpp"
#include "inclusol/expression.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace inclusol {

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VelocityDecl {
  std::string type = "zero";  ///< zero | linear | tanh | ball | box
  double scale = 0.0;         ///< linear: A = scale I; tanh: f = scale tanh(x)
  std::vector<double> diag;   ///< linear: A = diag(...)
  std::vector<std::vector<double>> matrix;
  std::vector<double> shift;  ///< constant b added to A x
  double radius = 0.0;        ///< ball: F = {A x + b} + B(0, radius)
  std::vector<double> lower, upper;
  bool operator==(const VelocityDecl&) const = default;
};

struct KernelDecl {
  std::string type = "zero";  ///< zero | linear | decaying | forcing | controlled | controlled_square
  double scale = 0.0;         ///< linear/decaying: g = scale e^{-rate (t-s)} x; controlled: state part
  double rate = 0.0;
  double control_scale = 0.0;       ///< controlled: + control_scale u; controlled_square: control_scale u.*u
  std::vector<std::string> values;  ///< forcing: g = (f_1(s), ..., f_D(s))
  bool operator==(const KernelDecl&) const = default;
};

struct EnvelopeDecl {
  std::string c, d, sigma, mu, k, k_tilde;  ///< expressions; empty means absent (zero)
  bool operator==(const EnvelopeDecl&) const = default;
};

struct SetDecl {
  std::string type = "halfspace";  ///< halfspace | ball | ball_complement | box | union
  std::vector<double> normal;
  std::string offset;                       ///< halfspace: <normal, y> <= offset(t)
  std::vector<std::string> center;          ///< ball / ball_complement, per coordinate in t
  std::string radius;                       ///< in t
  std::vector<std::string> lower, upper;    ///< box, per coordinate in t
  std::vector<SetDecl> members;             ///< union
  bool operator==(const SetDecl&) const = default;
};

struct MovingSetDecl {
  SetDecl set;
  double coupling = 0.0;  ///< C(t,x) = S(t) + coupling x
  std::string zeta = "0";
  std::string zeta_dot;
  double L = 0.0;
  double alpha0 = 1.0;
  double rho = std::numeric_limits<double>::infinity();
  bool operator==(const MovingSetDecl&) const = default;
};

struct ControlDecl {
  std::vector<double> lower, upper;  ///< box control set
  std::vector<double> center;        ///< ball control set (when radius > 0)
  double radius = 0.0;
  double control_weight = 1.0;  ///< phi = w_u |u|^2 + w_v |v|^2 + w_x |x|^2
  double velocity_weight = 0.0;
  double state_weight = 0.0;
  double terminal_weight = 0.0;  ///< l = w_T |x(T) - target|^2
  std::vector<double> target;
  std::vector<double> terminal_lower, terminal_upper;
  long long starts = 1;
  long long iterations = 200;
  std::optional<double> reference_cost;
  double reference_tolerance = 0.05;  ///< relative
  bool operator==(const ControlDecl&) const = default;
};

struct ProbeDecl {
  std::vector<long long> modes{1, 2, 4, 8, 16, 32};
  long long cells = 4096;
  std::vector<double> high{1.0}, low{-1.0};
  bool expect_flagged = false;
  bool operator==(const ProbeDecl&) const = default;
};

struct RunDecl {
  std::string command = "solve";  ///< solve | sweep | bounds | control | study | probe
  std::string scheme;             ///< euler | cascade | catchingUp | reduced (default by command)
  std::vector<long long> dims;
  std::vector<long long> study;
  std::vector<double> order_range{0.8, 1.2};
  std::string oracle;  ///< rk4
  long long oracle_steps = 100000;
  double oracle_tolerance = 5e-3;
  std::vector<double> second_start;  ///< uniqueness run from this start
  bool nonincreasing = false;        ///< require the uniqueness gap to be nonincreasing
  std::vector<std::string> exact;    ///< exact solution per coordinate, in t
  double exact_tolerance_h = 2.0;    ///< tolerance = exact_tolerance_h * h
  bool compare_schemes = false;      ///< catching-up against reduced across the study grids
  double tol_projection = 1e-12;
  double bounds_tolerance = 1e-6;
  std::uint64_t seed = 0;
  bool operator==(const RunDecl&) const = default;
};

struct Scenario {
  std::string name;
  long long dimension = 1;
  double horizon = 1.0;
  long long steps = 100;
  std::vector<double> x0;
  VelocityDecl F;
  KernelDecl kernel;
  EnvelopeDecl envelope;
  std::optional<MovingSetDecl> moving_set;
  RunDecl run;
  std::optional<ControlDecl> control;
  std::optional<ProbeDecl> probe;
  std::string output;
  bool operator==(const Scenario&) const = default;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string where(const YAML::Node& n) {
  const YAML::Mark m = n.Mark();
  if (m.is_null()) return "";
  return "line " + std::to_string(m.line + 1) + ", column " + std::to_string(m.column + 1) + ": ";
}

inline void allow_keys(const YAML::Node& n, std::initializer_list<const char*> keys) {
  if (!n.IsMap()) throw ScenarioError(where(n) + "expected a mapping");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& kv : n) {
    auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ScenarioError(where(kv.first) + "unknown key '" + key + "'");
  }
}

template <class T>
void read(const YAML::Node& parent, const char* key, T& out) {
  YAML::Node n = parent[key];
  if (!n) return;
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      out = n.Scalar();
      if (!n.IsScalar()) throw ScenarioError(where(n) + "'" + key + "' must be a scalar");
    } else {
      out = n.as<T>();
    }
  } catch (const YAML::Exception& e) {
    throw ScenarioError(where(n) + "bad value for '" + key + "': " + e.msg);
  }
}

template <class T>
void read(const YAML::Node& parent, const char* key, std::optional<T>& out) {
  if (!parent[key]) return;
  T v{};
  read(parent, key, v);
  out = v;
}

/// Accepts a number or an expression string; both are stored as the source text.
inline void read_expr(const YAML::Node& parent, const char* key, std::string& out) {
  YAML::Node n = parent[key];
  if (!n) return;
  if (!n.IsScalar()) throw ScenarioError(where(n) + "'" + key + "' must be an expression");
  out = n.Scalar();
  try {
    Expression check(out);
  } catch (const ExpressionError& e) {
    throw ScenarioError(where(n) + "in '" + key + "': " + e.what());
  }
}

inline void read_exprs(const YAML::Node& parent, const char* key, std::vector<std::string>& out) {
  YAML::Node n = parent[key];
  if (!n) return;
  if (!n.IsSequence()) throw ScenarioError(where(n) + "'" + key + "' must be a list");
  out.clear();
  for (const auto& item : n) {
    if (!item.IsScalar()) throw ScenarioError(where(item) + "expected an expression");
    try {
      Expression check(item.Scalar());
    } catch (const ExpressionError& e) {
      throw ScenarioError(where(item) + "in '" + key + "': " + e.what());
    }
    out.push_back(item.Scalar());
  }
}

inline VelocityDecl parse_velocity(const YAML::Node& n) {
  allow_keys(n, {"type", "scale", "diag", "matrix", "shift", "radius", "lower", "upper"});
  VelocityDecl d;
  read(n, "type", d.type);
  read(n, "scale", d.scale);
  read(n, "diag", d.diag);
  read(n, "matrix", d.matrix);
  read(n, "shift", d.shift);
  read(n, "radius", d.radius);
  read(n, "lower", d.lower);
  read(n, "upper", d.upper);
  static const std::set<std::string> types{"zero", "linear", "tanh", "ball", "box"};
  if (!types.count(d.type)) throw ScenarioError(where(n["type"]) + "unknown velocity map '" + d.type + "'");
  return d;
}

inline KernelDecl parse_kernel(const YAML::Node& n) {
  allow_keys(n, {"type", "scale", "rate", "control_scale", "values"});
  KernelDecl d;
  read(n, "type", d.type);
  read(n, "scale", d.scale);
  read(n, "rate", d.rate);
  read(n, "control_scale", d.control_scale);
  read_exprs(n, "values", d.values);
  static const std::set<std::string> types{"zero", "linear", "decaying", "forcing", "controlled", "controlled_square"};
  if (!types.count(d.type)) throw ScenarioError(where(n["type"]) + "unknown kernel '" + d.type + "'");
  return d;
}

inline SetDecl parse_set(const YAML::Node& n) {
  allow_keys(n, {"type", "normal", "offset", "center", "radius", "lower", "upper", "members"});
  SetDecl d;
  read(n, "type", d.type);
  read(n, "normal", d.normal);
  read_expr(n, "offset", d.offset);
  read_exprs(n, "center", d.center);
  read_expr(n, "radius", d.radius);
  read_exprs(n, "lower", d.lower);
  read_exprs(n, "upper", d.upper);
  if (YAML::Node m = n["members"]) {
    if (!m.IsSequence()) throw ScenarioError(where(m) + "'members' must be a list");
    for (const auto& item : m) d.members.push_back(parse_set(item));
  }
  static const std::set<std::string> types{"halfspace", "ball", "ball_complement", "box", "union"};
  if (!types.count(d.type)) throw ScenarioError(where(n["type"]) + "unknown set '" + d.type + "'");
  return d;
}

inline MovingSetDecl parse_moving_set(const YAML::Node& n) {
  allow_keys(n, {"set", "coupling", "zeta", "zeta_dot", "L", "alpha0", "rho"});
  MovingSetDecl d;
  if (!n["set"]) throw ScenarioError(where(n) + "moving_set needs 'set'");
  d.set = parse_set(n["set"]);
  read(n, "coupling", d.coupling);
  read_expr(n, "zeta", d.zeta);
  read_expr(n, "zeta_dot", d.zeta_dot);
  read(n, "L", d.L);
  read(n, "alpha0", d.alpha0);
  read(n, "rho", d.rho);
  return d;
}

inline ControlDecl parse_control(const YAML::Node& n) {
  allow_keys(n, {"lower", "upper", "center", "radius", "control_weight", "velocity_weight", "state_weight",
                 "terminal_weight", "target", "terminal_lower", "terminal_upper", "starts", "iterations",
                 "reference_cost", "reference_tolerance"});
  ControlDecl d;
  read(n, "lower", d.lower);
  read(n, "upper", d.upper);
  read(n, "center", d.center);
  read(n, "radius", d.radius);
  read(n, "control_weight", d.control_weight);
  read(n, "velocity_weight", d.velocity_weight);
  read(n, "state_weight", d.state_weight);
  read(n, "terminal_weight", d.terminal_weight);
  read(n, "target", d.target);
  read(n, "terminal_lower", d.terminal_lower);
  read(n, "terminal_upper", d.terminal_upper);
  read(n, "starts", d.starts);
  read(n, "iterations", d.iterations);
  read(n, "reference_cost", d.reference_cost);
  read(n, "reference_tolerance", d.reference_tolerance);
  return d;
}

inline ProbeDecl parse_probe(const YAML::Node& n) {
  allow_keys(n, {"modes", "cells", "high", "low", "expect_flagged"});
  ProbeDecl d;
  read(n, "modes", d.modes);
  read(n, "cells", d.cells);
  read(n, "high", d.high);
  read(n, "low", d.low);
  read(n, "expect_flagged", d.expect_flagged);
  return d;
}

inline RunDecl parse_run(const YAML::Node& n) {
  allow_keys(n, {"command", "scheme", "dims", "study", "order_range", "oracle", "oracle_steps", "oracle_tolerance",
                 "second_start", "nonincreasing", "exact", "exact_tolerance_h", "compare_schemes",
                 "tol_projection", "bounds_tolerance", "seed"});
  RunDecl d;
  read(n, "command", d.command);
  read(n, "scheme", d.scheme);
  read(n, "dims", d.dims);
  read(n, "study", d.study);
  read(n, "order_range", d.order_range);
  read(n, "oracle", d.oracle);
  read(n, "oracle_steps", d.oracle_steps);
  read(n, "oracle_tolerance", d.oracle_tolerance);
  read(n, "second_start", d.second_start);
  read(n, "nonincreasing", d.nonincreasing);
  read_exprs(n, "exact", d.exact);
  read(n, "exact_tolerance_h", d.exact_tolerance_h);
  read(n, "compare_schemes", d.compare_schemes);
  read(n, "tol_projection", d.tol_projection);
  read(n, "bounds_tolerance", d.bounds_tolerance);
  read(n, "seed", d.seed);
  static const std::set<std::string> commands{"solve", "sweep", "bounds", "control", "study", "probe"};
  if (!commands.count(d.command)) throw ScenarioError(where(n["command"]) + "unknown command '" + d.command + "'");
  static const std::set<std::string> schemes{"", "euler", "cascade", "catchingUp", "reduced"};
  if (!schemes.count(d.scheme)) throw ScenarioError(where(n["scheme"]) + "unknown scheme '" + d.scheme + "'");
  if (d.order_range.size() != 2) throw ScenarioError(where(n["order_range"]) + "order_range needs two entries");
  return d;
}

}  // namespace detail

/// Parses YAML text; `origin` prefixes error messages.
inline Scenario parse_scenario(const std::string& text, const std::string& origin = "<scenario>");

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct Model {
  ProblemSpec spec;
  std::optional<ControlProblem> control;
};

namespace detail {

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline void expect_size(std::size_t got, long long want, const std::string& what) {
  if (static_cast<long long>(got) != want) {
    throw std::invalid_argument(what + " must have " + std::to_string(want) + " entries");
  }
}

inline Matrix linear_part(const VelocityDecl& d, long long D) {
  if (!d.matrix.empty()) {
    expect_size(d.matrix.size(), D, "matrix");
    Matrix A(D, D);
    for (long long i = 0; i < D; ++i) {
      expect_size(d.matrix[static_cast<std::size_t>(i)].size(), D, "matrix row");
      for (long long j = 0; j < D; ++j) A(i, j) = d.matrix[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return A;
  }
  if (!d.diag.empty()) {
    expect_size(d.diag.size(), D, "diag");
    return to_vector(d.diag).asDiagonal();
  }
  return d.scale * Matrix::Identity(D, D);
}

inline Vector shift_of(const VelocityDecl& d, long long D) {
  if (d.shift.empty()) return Vector::Zero(D);
  expect_size(d.shift.size(), D, "shift");
  return to_vector(d.shift);
}

inline VelocityMap build_velocity(const VelocityDecl& d, long long D) {
  if (d.type == "zero") return zero_map();
  if (d.type == "tanh") {
    const double a = d.scale;
    return SingletonMap{[a](double, const Vector& x) -> Vector { return a * x.array().tanh().matrix(); }};
  }
  if (d.type == "box") {
    expect_size(d.lower.size(), D, "lower");
    expect_size(d.upper.size(), D, "upper");
    return VelocityBox{to_vector(d.lower), to_vector(d.upper)};
  }
  Matrix A = linear_part(d, D);
  Vector b = shift_of(d, D);
  StateMap f = [A, b](double, const Vector& x) -> Vector { return A * x + b; };
  if (d.type == "ball") {
    if (!(d.radius >= 0.0)) throw std::invalid_argument("velocity ball radius must be nonnegative");
    return AffineSetMap{f, Ball{Vector::Zero(D), d.radius}};
  }
  return SingletonMap{f};
}

inline Kernel build_kernel(const KernelDecl& d, long long D) {
  if (d.type == "zero") return Kernel::zero();
  if (d.type == "linear") {
    const double a = d.scale;
    return Kernel::state([a](double, double, const Vector& x) -> Vector { return a * x; }, false);
  }
  if (d.type == "decaying") {
    const double a = d.scale, lambda = d.rate;
    return Kernel::state(
        [a, lambda](double t, double s, const Vector& x) -> Vector { return a * std::exp(-lambda * (t - s)) * x; },
        true);
  }
  if (d.type == "forcing") {
    expect_size(d.values.size(), D, "forcing values");
    std::vector<Expression> f;
    for (const auto& src : d.values) {
      f.emplace_back(src);
      if (f.back().uses_r()) throw std::invalid_argument("forcing may depend on t and s only");
    }
    bool uses_t = std::any_of(f.begin(), f.end(), [](const Expression& e) { return e.uses_t(); });
    return Kernel::state(
        [f](double t, double s, const Vector&) -> Vector {
          Vector out(static_cast<Eigen::Index>(f.size()));
          for (std::size_t i = 0; i < f.size(); ++i) out[static_cast<Eigen::Index>(i)] = f[i](t, s);
          return out;
        },
        uses_t);
  }
  if (d.type == "controlled") {
    const double a = d.scale, b = d.control_scale;
    return Kernel::controlled(
        [a, b](double, double, const Vector& x, const Vector& u) -> Vector {
          if (u.size() != x.size()) throw std::invalid_argument("controlled kernel needs dim u = dim x");
          return a * x + b * u;
        },
        false);
  }
  const double b = d.control_scale;
  return Kernel::controlled(
      [b](double, double, const Vector&, const Vector& u) -> Vector { return b * u.cwiseProduct(u); }, false);
}

inline ScalarFn scalar_fn(const std::string& src, const char* what) {
  if (src.empty()) return {};
  Expression e(src);
  if (e.uses_s() || e.uses_r()) throw std::invalid_argument(std::string(what) + " may depend on t only");
  return [e](double t) { return e(t); };
}

inline Vector eval_all(const std::vector<Expression>& es, double t) {
  Vector v(static_cast<Eigen::Index>(es.size()));
  for (std::size_t i = 0; i < es.size(); ++i) v[static_cast<Eigen::Index>(i)] = es[i](t);
  return v;
}

inline std::vector<Expression> exprs(const std::vector<std::string>& src, long long D, const char* what) {
  expect_size(src.size(), D, what);
  std::vector<Expression> out;
  for (const auto& s : src) out.emplace_back(s);
  return out;
}

inline std::function<SetGeometry(double)> build_set(const SetDecl& d, long long D) {
  if (d.type == "halfspace") {
    expect_size(d.normal.size(), D, "normal");
    Vector a = to_vector(d.normal);
    Expression b(d.offset.empty() ? "0" : d.offset);
    return [a, b](double t) -> SetGeometry { return HalfSpace{a, b(t)}; };
  }
  if (d.type == "ball" || d.type == "ball_complement") {
    auto c = exprs(d.center, D, "center");
    Expression r(d.radius.empty() ? "1" : d.radius);
    if (d.type == "ball") return [c, r](double t) -> SetGeometry { return Ball{eval_all(c, t), r(t)}; };
    return [c, r](double t) -> SetGeometry { return BallComplement{eval_all(c, t), r(t)}; };
  }
  if (d.type == "box") {
    auto lo = exprs(d.lower, D, "lower");
    auto hi = exprs(d.upper, D, "upper");
    return [lo, hi](double t) -> SetGeometry { return Box{eval_all(lo, t), eval_all(hi, t)}; };
  }
  std::vector<std::function<SetGeometry(double)>> members;
  for (const auto& m : d.members) {
    if (m.type == "union" || m.type == "ball_complement") throw std::invalid_argument("union members must be convex");
    members.push_back(build_set(m, D));
  }
  if (members.empty()) throw std::invalid_argument("union needs members");
  return [members](double t) -> SetGeometry {
    Union u;
    for (const auto& m : members) {
      SetGeometry g = m(t);
      std::visit(
          [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Union> || std::is_same_v<T, BallComplement>) {
              throw std::invalid_argument("union members must be convex");
            } else {
              u.members.push_back(s);
            }
          },
          g);
    }
    return u;
  };
}

/// S + v.
inline SetGeometry translate(const SetGeometry& S, const Vector& v) {
  auto convex = [&](const ConvexSet& c) -> ConvexSet {
    return std::visit(
        [&](const auto& s) -> ConvexSet {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, HalfSpace>) return HalfSpace{s.normal, s.offset + s.normal.dot(v)};
          else if constexpr (std::is_same_v<T, Box>) return Box{s.lower + v, s.upper + v};
          else if constexpr (std::is_same_v<T, Ball>) return Ball{s.center + v, s.radius};
          else return Polyhedron{s.A, s.b + s.A * v};
        },
        c);
  };
  return std::visit(
      [&](const auto& s) -> SetGeometry {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Union>) {
          Union u;
          for (const auto& m : s.members) u.members.push_back(convex(m));
          return u;
        } else if constexpr (std::is_same_v<T, BallComplement>) {
          return BallComplement{s.center + v, s.radius};
        } else {
          return std::visit([](const auto& c) -> SetGeometry { return c; }, convex(ConvexSet{s}));
        }
      },
      S);
}

inline MovingSet build_moving_set(const MovingSetDecl& d, long long D) {
  MovingSet M;
  auto base = build_set(d.set, D);
  const double lambda = d.coupling;
  if (lambda == 0.0) {
    M.family = [base](double t, const Vector&) { return base(t); };
    M.kind = VariationKind::TimeOnly;
  } else {
    M.family = [base, lambda](double t, const Vector& x) { return translate(base(t), lambda * x); };
    M.kind = VariationKind::StateDependent;
  }
  M.zeta = scalar_fn(d.zeta.empty() ? "0" : d.zeta, "zeta");
  M.zeta_dot = scalar_fn(d.zeta_dot, "zeta_dot");
  M.L = d.L;
  if (std::abs(lambda) > d.L) throw std::invalid_argument("coupling exceeds the declared L");
  return M;
}

}  // namespace detail

inline Model build_model(const Scenario& s) {
  const long long D = s.dimension;
  if (D < 1) throw std::invalid_argument("dimension must be positive");
  detail::expect_size(s.x0.size(), D, "x0");
  Model m;
  ProblemSpec& p = m.spec;
  p.x0 = detail::to_vector(s.x0);
  p.grid = make_grid(s.horizon, s.steps);
  p.F = detail::build_velocity(s.F, D);
  p.g = detail::build_kernel(s.kernel, D);

  const EnvelopeDecl& e = s.envelope;
  p.envelope.c = detail::scalar_fn(e.c, "c");
  p.envelope.d = detail::scalar_fn(e.d, "d");
  p.envelope.k = detail::scalar_fn(e.k, "k");
  p.envelope.k_tilde = detail::scalar_fn(e.k_tilde, "k_tilde");
  if (!e.sigma.empty()) {
    Expression sig(e.sigma);
    if (sig.uses_r()) throw std::invalid_argument("sigma may depend on t and s only");
    p.envelope.sigma = [sig](double t, double s2) { return sig(t, s2); };
  }
  if (!e.mu.empty()) {
    Expression mu(e.mu);
    if (mu.uses_s()) throw std::invalid_argument("mu may depend on r and t only");
    p.envelope.mu = [mu](double r, double t) { return mu(t, 0.0, r); };
  }

  if (s.moving_set) {
    p.C = detail::build_moving_set(*s.moving_set, D);
    p.alpha_far = AlphaFar{s.moving_set->alpha0, s.moving_set->rho};
  }

  if (s.control) {
    const ControlDecl& c = *s.control;
    ControlProblem cp;
    cp.dynamics = p;
    if (c.radius > 0.0) {
      detail::expect_size(c.center.size(), D, "control center");
      cp.U = Ball{detail::to_vector(c.center), c.radius};
    } else {
      detail::expect_size(c.lower.size(), D, "control lower");
      detail::expect_size(c.upper.size(), D, "control upper");
      cp.U = Box{detail::to_vector(c.lower), detail::to_vector(c.upper)};
    }
    const double wu = c.control_weight, wv = c.velocity_weight, wx = c.state_weight;
    cp.running = [wu, wv, wx](double, const Vector& x, const Vector& v, const Vector& u) {
      return wu * u.squaredNorm() + wv * v.squaredNorm() + wx * x.squaredNorm();
    };
    if (c.terminal_weight != 0.0) {
      Vector target = c.target.empty() ? Vector(Vector::Zero(D)) : detail::to_vector(c.target);
      detail::expect_size(static_cast<std::size_t>(target.size()), D, "target");
      const double w = c.terminal_weight;
      cp.terminal = [w, target](const Vector&, const Vector& xT) { return w * (xT - target).squaredNorm(); };
    }
    if (!c.terminal_lower.empty() || !c.terminal_upper.empty()) {
      detail::expect_size(c.terminal_lower.size(), D, "terminal_lower");
      detail::expect_size(c.terminal_upper.size(), D, "terminal_upper");
      cp.terminal_box = Box{detail::to_vector(c.terminal_lower), detail::to_vector(c.terminal_upper)};
    }
    if (c.starts < 1 || c.iterations < 0) throw std::invalid_argument("starts must be positive");
    m.control = std::move(cp);
  }
  return m;
}

namespace detail {

inline void validate_scenario(const Scenario& s) {
  if (s.name.empty()) throw std::invalid_argument("scenario needs a name");
  if (!(s.horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (s.steps < 1) throw std::invalid_argument("empty grid");
  if (s.moving_set && !(s.moving_set->L >= 0.0 && s.moving_set->L < 1.0)) {
    throw std::invalid_argument("L must lie in [0,1)");
  }
  const std::string& cmd = s.run.command;
  if ((cmd == "sweep") != static_cast<bool>(s.moving_set) && cmd != "bounds" && cmd != "study") {
    throw std::invalid_argument(cmd == "sweep" ? "sweep needs a moving_set" : "moving_set requires command sweep");
  }
  if (cmd == "control" && !s.control) throw std::invalid_argument("control command needs a control block");
  if (cmd == "probe" && !s.probe) throw std::invalid_argument("probe command needs a probe block");
  Model m = build_model(s);
  m.spec.validate(static_cast<bool>(s.moving_set));
  if (m.control) m.control->validate();
  SolverConfig cfg;
  for (long long n : s.run.dims) cfg.dims.push_back(n);
  cfg.tol_projection = s.run.tol_projection;
  cfg.validate(s.dimension);
  for (std::size_t i = 1; i < s.run.study.size(); ++i) {
    if (s.run.study[i] <= s.run.study[i - 1] || s.run.study[i] % s.run.study[i - 1] != 0) {
      throw std::invalid_argument("misaligned grids");
    }
  }
  if (!s.run.exact.empty()) expect_size(s.run.exact.size(), s.dimension, "exact");
  if (!s.run.second_start.empty()) expect_size(s.run.second_start.size(), s.dimension, "second_start");
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text, const std::string& origin) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ScenarioError(origin + ": parse error at line " + std::to_string(e.mark.line + 1) + ", column " +
                        std::to_string(e.mark.column + 1) + ": " + e.msg);
  }
  Scenario s;
  try {
    using namespace detail;
    allow_keys(root, {"name", "dimension", "horizon", "steps", "x0", "dynamics", "envelope", "moving_set", "run",
                      "control", "probe", "output"});
    read(root, "name", s.name);
    read(root, "dimension", s.dimension);
    read(root, "horizon", s.horizon);
    read(root, "steps", s.steps);
    read(root, "x0", s.x0);
    if (YAML::Node d = root["dynamics"]) {
      allow_keys(d, {"F", "kernel"});
      if (d["F"]) s.F = parse_velocity(d["F"]);
      if (d["kernel"]) s.kernel = parse_kernel(d["kernel"]);
    }
    if (YAML::Node e = root["envelope"]) {
      allow_keys(e, {"c", "d", "sigma", "mu", "k", "k_tilde"});
      read_expr(e, "c", s.envelope.c);
      read_expr(e, "d", s.envelope.d);
      read_expr(e, "sigma", s.envelope.sigma);
      read_expr(e, "mu", s.envelope.mu);
      read_expr(e, "k", s.envelope.k);
      read_expr(e, "k_tilde", s.envelope.k_tilde);
    }
    if (root["moving_set"]) s.moving_set = parse_moving_set(root["moving_set"]);
    if (root["run"]) s.run = parse_run(root["run"]);
    if (root["control"]) s.control = parse_control(root["control"]);
    if (root["probe"]) s.probe = parse_probe(root["probe"]);
    read(root, "output", s.output);
    if (s.x0.empty()) s.x0.assign(static_cast<std::size_t>(std::max(0LL, s.dimension)), 0.0);
  } catch (const ScenarioError& e) {
    throw ScenarioError(origin + ": " + e.what());
  } catch (const YAML::Exception& e) {
    throw ScenarioError(origin + ": " + e.what());
  }
  try {
    detail::validate_scenario(s);
  } catch (const std::invalid_argument& e) {
    throw ScenarioError(origin + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void emit_list(YAML::Emitter& out, const char* key, const std::vector<T>& v) {
  if (v.empty()) return;
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& x : v) out << x;
  out << YAML::EndSeq;
}

inline void emit_str(YAML::Emitter& out, const char* key, const std::string& v) {
  if (!v.empty()) out << YAML::Key << key << YAML::Value << YAML::DoubleQuoted << v;
}

inline void emit_set(YAML::Emitter& out, const SetDecl& d) {
  out << YAML::BeginMap << YAML::Key << "type" << YAML::Value << d.type;
  emit_list(out, "normal", d.normal);
  emit_str(out, "offset", d.offset);
  if (!d.center.empty()) {
    out << YAML::Key << "center" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& c : d.center) out << YAML::DoubleQuoted << c;
    out << YAML::EndSeq;
  }
  emit_str(out, "radius", d.radius);
  for (auto [key, list] : {std::pair{"lower", &d.lower}, std::pair{"upper", &d.upper}}) {
    if (list->empty()) continue;
    out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& c : *list) out << YAML::DoubleQuoted << c;
    out << YAML::EndSeq;
  }
  if (!d.members.empty()) {
    out << YAML::Key << "members" << YAML::Value << YAML::BeginSeq;
    for (const auto& m : d.members) emit_set(out, m);
    out << YAML::EndSeq;
  }
  out << YAML::EndMap;
}

}  // namespace detail

/// YAML text that parses back to an equal Scenario.
inline std::string serialize(const Scenario& s) {
  using namespace detail;
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << s.name;
  out << YAML::Key << "dimension" << YAML::Value << s.dimension;
  out << YAML::Key << "horizon" << YAML::Value << s.horizon;
  out << YAML::Key << "steps" << YAML::Value << s.steps;
  emit_list(out, "x0", s.x0);

  out << YAML::Key << "dynamics" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "F" << YAML::Value << YAML::BeginMap << YAML::Key << "type" << YAML::Value << s.F.type;
  out << YAML::Key << "scale" << YAML::Value << s.F.scale;
  emit_list(out, "diag", s.F.diag);
  if (!s.F.matrix.empty()) {
    out << YAML::Key << "matrix" << YAML::Value << YAML::BeginSeq;
    for (const auto& row : s.F.matrix) out << YAML::Flow << row;
    out << YAML::EndSeq;
  }
  emit_list(out, "shift", s.F.shift);
  out << YAML::Key << "radius" << YAML::Value << s.F.radius;
  emit_list(out, "lower", s.F.lower);
  emit_list(out, "upper", s.F.upper);
  out << YAML::EndMap;
  out << YAML::Key << "kernel" << YAML::Value << YAML::BeginMap << YAML::Key << "type" << YAML::Value
      << s.kernel.type;
  out << YAML::Key << "scale" << YAML::Value << s.kernel.scale;
  out << YAML::Key << "rate" << YAML::Value << s.kernel.rate;
  out << YAML::Key << "control_scale" << YAML::Value << s.kernel.control_scale;
  if (!s.kernel.values.empty()) {
    out << YAML::Key << "values" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : s.kernel.values) out << YAML::DoubleQuoted << v;
    out << YAML::EndSeq;
  }
  out << YAML::EndMap << YAML::EndMap;

  out << YAML::Key << "envelope" << YAML::Value << YAML::BeginMap;
  emit_str(out, "c", s.envelope.c);
  emit_str(out, "d", s.envelope.d);
  emit_str(out, "sigma", s.envelope.sigma);
  emit_str(out, "mu", s.envelope.mu);
  emit_str(out, "k", s.envelope.k);
  emit_str(out, "k_tilde", s.envelope.k_tilde);
  out << YAML::EndMap;

  if (s.moving_set) {
    const MovingSetDecl& m = *s.moving_set;
    out << YAML::Key << "moving_set" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "set" << YAML::Value;
    emit_set(out, m.set);
    out << YAML::Key << "coupling" << YAML::Value << m.coupling;
    emit_str(out, "zeta", m.zeta);
    emit_str(out, "zeta_dot", m.zeta_dot);
    out << YAML::Key << "L" << YAML::Value << m.L;
    out << YAML::Key << "alpha0" << YAML::Value << m.alpha0;
    out << YAML::Key << "rho" << YAML::Value << m.rho;
    out << YAML::EndMap;
  }

  const RunDecl& r = s.run;
  out << YAML::Key << "run" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "command" << YAML::Value << r.command;
  if (!r.scheme.empty()) out << YAML::Key << "scheme" << YAML::Value << r.scheme;
  emit_list(out, "dims", r.dims);
  emit_list(out, "study", r.study);
  emit_list(out, "order_range", r.order_range);
  if (!r.oracle.empty()) out << YAML::Key << "oracle" << YAML::Value << r.oracle;
  out << YAML::Key << "oracle_steps" << YAML::Value << r.oracle_steps;
  out << YAML::Key << "oracle_tolerance" << YAML::Value << r.oracle_tolerance;
  emit_list(out, "second_start", r.second_start);
  out << YAML::Key << "nonincreasing" << YAML::Value << r.nonincreasing;
  if (!r.exact.empty()) {
    out << YAML::Key << "exact" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : r.exact) out << YAML::DoubleQuoted << v;
    out << YAML::EndSeq;
  }
  out << YAML::Key << "exact_tolerance_h" << YAML::Value << r.exact_tolerance_h;
  out << YAML::Key << "compare_schemes" << YAML::Value << r.compare_schemes;
  out << YAML::Key << "tol_projection" << YAML::Value << r.tol_projection;
  out << YAML::Key << "bounds_tolerance" << YAML::Value << r.bounds_tolerance;
  out << YAML::Key << "seed" << YAML::Value << r.seed;
  out << YAML::EndMap;

  if (s.control) {
    const ControlDecl& c = *s.control;
    out << YAML::Key << "control" << YAML::Value << YAML::BeginMap;
    emit_list(out, "lower", c.lower);
    emit_list(out, "upper", c.upper);
    emit_list(out, "center", c.center);
    out << YAML::Key << "radius" << YAML::Value << c.radius;
    out << YAML::Key << "control_weight" << YAML::Value << c.control_weight;
    out << YAML::Key << "velocity_weight" << YAML::Value << c.velocity_weight;
    out << YAML::Key << "state_weight" << YAML::Value << c.state_weight;
    out << YAML::Key << "terminal_weight" << YAML::Value << c.terminal_weight;
    emit_list(out, "target", c.target);
    emit_list(out, "terminal_lower", c.terminal_lower);
    emit_list(out, "terminal_upper", c.terminal_upper);
    out << YAML::Key << "starts" << YAML::Value << c.starts;
    out << YAML::Key << "iterations" << YAML::Value << c.iterations;
    if (c.reference_cost) out << YAML::Key << "reference_cost" << YAML::Value << *c.reference_cost;
    out << YAML::Key << "reference_tolerance" << YAML::Value << c.reference_tolerance;
    out << YAML::EndMap;
  }
  if (s.probe) {
    const ProbeDecl& p = *s.probe;
    out << YAML::Key << "probe" << YAML::Value << YAML::BeginMap;
    emit_list(out, "modes", p.modes);
    out << YAML::Key << "cells" << YAML::Value << p.cells;
    emit_list(out, "high", p.high);
    emit_list(out, "low", p.low);
    out << YAML::Key << "expect_flagged" << YAML::Value << p.expect_flagged;
    out << YAML::EndMap;
  }
  if (!s.output.empty()) out << YAML::Key << "output" << YAML::Value << s.output;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace inclusol
