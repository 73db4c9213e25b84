#pragma once

/// @file
/// @brief Experiment configuration (JSON), problem assembly from a config, and
/// the simulate / solve / compare / verify commands with their file outputs.
///
/// Needs nlohmann/json (`json.hpp`) on the include path.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnoc/gnoc.hpp"

namespace gnoc {

using Json = nlohmann::ordered_json;

inline constexpr const char* kConfigSchema = "gnoc.experiment/1";

/// Invalid configuration; the message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct QuarterCarConfig {
  double m1_kg = 3600.0;
  double m2_kg = 380.0;
  double k2_kN_per_m = 1000.0;
  double d1_kN_s_per_m = 34.0;
  double c = 40.0;
};

/// Multiplies one analytic Jacobian by `scale`. Test fixture only.
struct JacobianFault {
  std::string mapping;
  double scale = 1.0;
};

struct VerifyConfig {
  std::size_t jacobian_probes = 20;
  double jacobian_tol = 1e-4;
  std::size_t adjoint_pairs = 20;
  double adjoint_tol = 1e-6;
  std::size_t fd_directions = 5;
  double gradient_tol = 1e-4;
  double riccati_gd_tol = 1e-2;
  double normal_residual_tol = 1e-3;
  double gd_reference_tol = 1e-9;
  std::size_t gd_reference_max_iter = 5000;
  std::size_t certificate_iterations = 3;
};

/// Everything a command needs. Physical quarter-car quantities are kept in the
/// units of the file (kN based); build_experiment converts to SI.
struct ExperimentConfig {
  std::string schema = kConfigSchema;
  std::string name = "experiment";

  std::string model_type = "quarter_car";
  QuarterCarConfig quarter_car;
  LinearModelMatrices linear;
  std::optional<JacobianFault> jacobian_fault;

  double t0 = 0.0;
  double tf = 10.0;
  double dt = 0.01;
  std::size_t substeps = kDefaultSubsteps;

  Matrix Q = Matrix::Constant(1, 1, 0.1);
  Matrix T = Matrix::Constant(1, 1, 0.001);
  double alpha_u = 30.0;
  double alpha_p = 1e-10;

  std::string reference_source = "synthetic";  // synthetic | zero | file
  RoadProfileSpec road;
  std::string u_ref_file;
  Vector p_ref = Vector::Constant(1, 230.0);

  std::string start_u = "zero";  // zero | reference
  std::optional<Vector> p0;
  bool p_fixed = true;

  std::optional<double> p_relative;
  std::optional<Vector> p_low, p_up;
  std::optional<Vector> u_low, u_up;

  std::string inner = "riccati";
  double J_tol = 1e-8;
  std::size_t max_outer = 5;
  double armijo_beta = 0.75;
  double armijo_sigma = 1e-4;
  std::size_t max_backtracks = 50;
  double min_rel_progress = 1e-10;
  GdSettings gd;
  std::optional<Vector> inner_dp0;
  std::size_t compare_gd_iterations = 50;

  std::vector<std::size_t> y_iter{1, 3, 5, 7};
  std::string out_dir = "out";
  VerifyConfig verify;

  /// Directory the config was loaded from; relative paths resolve against it.
  std::string base_dir = ".";

  bool quarter_car_model() const { return model_type == "quarter_car"; }
  /// Factor from file units of p to SI.
  double p_scale() const { return quarter_car_model() ? 1e3 : 1.0; }
  /// Field name of a p-valued quantity in the file.
  std::string p_key(const std::string& base) const { return quarter_car_model() ? base + "_kN_per_m" : base; }
};

namespace detail {

inline std::string join_path(const std::string& a, const std::string& b) { return a.empty() ? b : a + "." + b; }

inline void reject_unknown(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!ok.count(it.key())) throw ConfigError(join_path(where, it.key()) + ": unknown field");
}

inline const Json& require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  return j;
}

inline double read_number(const Json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + ": must be finite");
  return v;
}

inline std::size_t read_count(const Json& j, const std::string& where) {
  if (!j.is_number_integer() || j.get<long long>() < 0) throw ConfigError(where + ": expected a non-negative integer");
  return j.get<std::size_t>();
}

inline bool read_bool(const Json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where + ": expected true or false");
  return j.get<bool>();
}

inline std::string read_string(const Json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + ": expected a string");
  return j.get<std::string>();
}

/// Number or array of numbers. Infinite bounds are written as the strings "inf"/"-inf".
inline Vector read_vector(const Json& j, const std::string& where) {
  auto one = [&](const Json& e, const std::string& w) {
    if (e.is_string()) {
      const auto s = e.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
      throw ConfigError(w + ": expected a number");
    }
    return read_number(e, w);
  };
  if (!j.is_array()) return Vector::Constant(1, one(j, where));
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = one(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

/// Array of rows. A bare number is accepted as a 1x1 matrix.
inline Matrix read_matrix(const Json& j, const std::string& where) {
  if (j.is_number()) return Matrix::Constant(1, 1, read_number(j, where));
  if (!j.is_array()) throw ConfigError(where + ": expected a matrix (array of rows)");
  if (j.empty()) return Matrix(0, 0);
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const std::string w = where + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || j[r].size() != cols) throw ConfigError(w + ": rows must be arrays of equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = read_number(j[r][c], w + "[" + std::to_string(c) + "]");
  }
  return m;
}

inline Json write_scalar(double v) {
  if (std::isinf(v)) return v > 0 ? Json("inf") : Json("-inf");
  return Json(v);
}

inline Json write_vector(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(write_scalar(v(i)));
  return a;
}

inline Json write_matrix(const Matrix& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(row);
  }
  return a;
}

template <class Fn>
void if_present(const Json& obj, const char* key, Fn&& fn) {
  if (obj.contains(key)) fn(obj.at(key));
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j, const std::string& base_dir = ".") {
  using namespace detail;
  require_object(j, "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  if (!j.contains("schema")) throw ConfigError("schema: missing");
  c.schema = read_string(j.at("schema"), "schema");
  if (c.schema != kConfigSchema) throw ConfigError("schema: unsupported version '" + c.schema + "', expected " + kConfigSchema);
  reject_unknown(j, "", {"schema", "name", "model", "grid", "weights", "reference", "start", "bounds", "solver",
                         "output", "verify"});
  if_present(j, "name", [&](const Json& v) { c.name = read_string(v, "name"); });

  if (!j.contains("model")) throw ConfigError("model: missing");
  {
    const Json& m = require_object(j.at("model"), "model");
    c.model_type = m.contains("type") ? read_string(m.at("type"), "model.type") : "quarter_car";
    if (c.model_type == "quarter_car") {
      reject_unknown(m, "model", {"type", "m1_kg", "m2_kg", "k2_kN_per_m", "d1_kN_s_per_m", "c", "jacobian_fault"});
      auto& q = c.quarter_car;
      if_present(m, "m1_kg", [&](const Json& v) { q.m1_kg = read_number(v, "model.m1_kg"); });
      if_present(m, "m2_kg", [&](const Json& v) { q.m2_kg = read_number(v, "model.m2_kg"); });
      if_present(m, "k2_kN_per_m", [&](const Json& v) { q.k2_kN_per_m = read_number(v, "model.k2_kN_per_m"); });
      if_present(m, "d1_kN_s_per_m", [&](const Json& v) { q.d1_kN_s_per_m = read_number(v, "model.d1_kN_s_per_m"); });
      if_present(m, "c", [&](const Json& v) { q.c = read_number(v, "model.c"); });
      if (!(q.m1_kg > 0)) throw ConfigError("model.m1_kg: must be > 0");
      if (!(q.m2_kg > 0)) throw ConfigError("model.m2_kg: must be > 0");
      if (!(q.k2_kN_per_m > 0)) throw ConfigError("model.k2_kN_per_m: must be > 0");
      if (!(q.d1_kN_s_per_m >= 0)) throw ConfigError("model.d1_kN_s_per_m: must be >= 0");
      if (!(q.c >= 0)) throw ConfigError("model.c: must be >= 0");
    } else if (c.model_type == "linear") {
      reject_unknown(m, "model", {"type", "A", "Bu", "Bp", "C", "Du", "Dp", "x0", "jacobian_fault"});
      for (const char* k : {"A", "Bu", "C"})
        if (!m.contains(k)) throw ConfigError(std::string("model.") + k + ": missing");
      auto& l = c.linear;
      l.A = read_matrix(m.at("A"), "model.A");
      l.Bu = read_matrix(m.at("Bu"), "model.Bu");
      l.C = read_matrix(m.at("C"), "model.C");
      if_present(m, "Bp", [&](const Json& v) { l.Bp = read_matrix(v, "model.Bp"); });
      if_present(m, "Du", [&](const Json& v) { l.Du = read_matrix(v, "model.Du"); });
      if_present(m, "Dp", [&](const Json& v) { l.Dp = read_matrix(v, "model.Dp"); });
      if_present(m, "x0", [&](const Json& v) { l.x0 = read_vector(v, "model.x0"); });
      try {
        l = normalized(l);
      } catch (const Error& e) {
        throw ConfigError(std::string("model: ") + e.what());
      }
    } else {
      throw ConfigError("model.type: expected 'quarter_car' or 'linear'");
    }
    if_present(m, "jacobian_fault", [&](const Json& v) {
      require_object(v, "model.jacobian_fault");
      reject_unknown(v, "model.jacobian_fault", {"mapping", "scale"});
      JacobianFault f;
      if (!v.contains("mapping")) throw ConfigError("model.jacobian_fault.mapping: missing");
      f.mapping = read_string(v.at("mapping"), "model.jacobian_fault.mapping");
      static const std::set<std::string> names{"f_x", "f_u", "f_p", "h_x", "h_u", "h_p"};
      if (!names.count(f.mapping)) throw ConfigError("model.jacobian_fault.mapping: unknown mapping '" + f.mapping + "'");
      if_present(v, "scale", [&](const Json& s) { f.scale = read_number(s, "model.jacobian_fault.scale"); });
      c.jacobian_fault = f;
    });
  }
  const Eigen::Index nu = c.quarter_car_model() ? 1 : c.linear.Bu.cols();
  const Eigen::Index np = c.quarter_car_model() ? 1 : c.linear.Bp.cols();
  const Eigen::Index ny = c.quarter_car_model() ? 1 : c.linear.C.rows();

  if_present(j, "grid", [&](const Json& g) {
    require_object(g, "grid");
    reject_unknown(g, "grid", {"t0", "tf", "dt", "substeps"});
    if_present(g, "t0", [&](const Json& v) { c.t0 = read_number(v, "grid.t0"); });
    if_present(g, "tf", [&](const Json& v) { c.tf = read_number(v, "grid.tf"); });
    if_present(g, "dt", [&](const Json& v) { c.dt = read_number(v, "grid.dt"); });
    if_present(g, "substeps", [&](const Json& v) { c.substeps = read_count(v, "grid.substeps"); });
  });
  if (!(c.tf > c.t0)) throw ConfigError("grid.tf: must exceed grid.t0");
  if (!(c.dt > 0)) throw ConfigError("grid.dt: must be > 0");
  {
    const double steps = (c.tf - c.t0) / c.dt;
    if (std::round(steps) < 1.0 || std::abs(steps - std::round(steps)) > 1e-12 * std::max(1.0, steps))
      throw ConfigError("grid.dt: must divide tf - t0");
  }
  if (c.substeps < 1) throw ConfigError("grid.substeps: must be >= 1");

  if (!c.quarter_car_model()) {
    c.Q = Matrix::Identity(ny, ny);
    c.T = Matrix::Zero(ny, ny);
  }
  if_present(j, "weights", [&](const Json& w) {
    require_object(w, "weights");
    reject_unknown(w, "weights", {"Q", "T", "alpha_u", "alpha_p"});
    auto weight = [&](const Json& v, const char* name) {
      Matrix m = read_matrix(v, std::string("weights.") + name);
      if (m.rows() == 1 && m.cols() == 1 && ny > 1) m = m(0, 0) * Matrix::Identity(ny, ny);
      if (m.rows() != ny || m.cols() != ny) throw ConfigError(std::string("weights.") + name + ": must be ny x ny");
      try {
        detail::require_symmetric_psd(m, name);
      } catch (const Error& e) {
        throw ConfigError(std::string("weights.") + e.what());
      }
      return m;
    };
    if_present(w, "Q", [&](const Json& v) { c.Q = weight(v, "Q"); });
    if_present(w, "T", [&](const Json& v) { c.T = weight(v, "T"); });
    if_present(w, "alpha_u", [&](const Json& v) { c.alpha_u = read_number(v, "weights.alpha_u"); });
    if_present(w, "alpha_p", [&](const Json& v) { c.alpha_p = read_number(v, "weights.alpha_p"); });
  });
  if (c.Q.rows() != ny) throw ConfigError("weights.Q: must be ny x ny");
  if (c.T.rows() != ny) throw ConfigError("weights.T: must be ny x ny");
  if (!(c.alpha_u >= 0)) throw ConfigError("weights.alpha_u: must be >= 0");
  if (!(c.alpha_p >= 0)) throw ConfigError("weights.alpha_p: must be >= 0");

  auto p_vector = [&](const Json& v, const std::string& where) {
    Vector p = read_vector(v, where);
    if (p.size() != np) throw ConfigError(where + ": expected " + std::to_string(np) + " entries");
    return p;
  };
  auto u_vector = [&](const Json& v, const std::string& where) {
    Vector u = read_vector(v, where);
    if (u.size() != nu) throw ConfigError(where + ": expected " + std::to_string(nu) + " entries");
    return u;
  };

  if (!c.quarter_car_model()) c.p_ref = Vector::Zero(np);
  if_present(j, "reference", [&](const Json& r) {
    require_object(r, "reference");
    const std::string pk = c.p_key("p_ref");
    reject_unknown(r, "reference", {"source", "road", "u_ref_file", "p_ref_kN_per_m", "p_ref"});
    if_present(r, "source", [&](const Json& v) { c.reference_source = read_string(v, "reference.source"); });
    if (c.reference_source != "synthetic" && c.reference_source != "zero" && c.reference_source != "file")
      throw ConfigError("reference.source: expected 'synthetic', 'zero' or 'file'");
    if (r.contains(pk)) c.p_ref = p_vector(r.at(pk), "reference." + pk);
    else if (r.contains(c.quarter_car_model() ? "p_ref" : "p_ref_kN_per_m"))
      throw ConfigError("reference: p is given as '" + pk + "' for model type " + c.model_type);
    if_present(r, "road", [&](const Json& v) {
      require_object(v, "reference.road");
      reject_unknown(v, "reference.road", {"seed", "bump_count", "amplitude_min_m", "amplitude_max_m", "width_min_s",
                                           "width_max_s", "allow_negative"});
      auto& s = c.road;
      if_present(v, "seed", [&](const Json& x) {
        if (!x.is_number_unsigned()) throw ConfigError("reference.road.seed: expected an unsigned integer");
        s.seed = x.get<std::uint64_t>();
      });
      if_present(v, "bump_count", [&](const Json& x) { s.bump_count = read_count(x, "reference.road.bump_count"); });
      if_present(v, "amplitude_min_m", [&](const Json& x) { s.amplitude_min = read_number(x, "reference.road.amplitude_min_m"); });
      if_present(v, "amplitude_max_m", [&](const Json& x) { s.amplitude_max = read_number(x, "reference.road.amplitude_max_m"); });
      if_present(v, "width_min_s", [&](const Json& x) { s.width_min = read_number(x, "reference.road.width_min_s"); });
      if_present(v, "width_max_s", [&](const Json& x) { s.width_max = read_number(x, "reference.road.width_max_s"); });
      if_present(v, "allow_negative", [&](const Json& x) { s.allow_negative = read_bool(x, "reference.road.allow_negative"); });
      try {
        s.validate();
      } catch (const Error& e) {
        throw ConfigError(std::string("reference.road: ") + e.what());
      }
    });
    if_present(r, "u_ref_file", [&](const Json& v) { c.u_ref_file = read_string(v, "reference.u_ref_file"); });
  });
  if (c.p_ref.size() != np) throw ConfigError("reference." + c.p_key("p_ref") + ": missing");
  if (c.reference_source == "file") {
    if (c.u_ref_file.empty()) throw ConfigError("reference.u_ref_file: required when source is 'file'");
    const auto path = std::filesystem::path(base_dir) / c.u_ref_file;
    if (!std::filesystem::exists(path)) throw ConfigError("reference.u_ref_file: file not found: " + path.string());
  }

  if_present(j, "start", [&](const Json& s) {
    require_object(s, "start");
    reject_unknown(s, "start", {"u", "p0_kN_per_m", "p0", "p_fixed"});
    if_present(s, "u", [&](const Json& v) { c.start_u = read_string(v, "start.u"); });
    if (c.start_u != "zero" && c.start_u != "reference") throw ConfigError("start.u: expected 'zero' or 'reference'");
    const std::string pk = c.p_key("p0");
    if (s.contains(pk)) c.p0 = p_vector(s.at(pk), "start." + pk);
    else if (s.contains(c.quarter_car_model() ? "p0" : "p0_kN_per_m"))
      throw ConfigError("start: p is given as '" + pk + "' for model type " + c.model_type);
    if_present(s, "p_fixed", [&](const Json& v) { c.p_fixed = read_bool(v, "start.p_fixed"); });
  });

  if_present(j, "bounds", [&](const Json& b) {
    require_object(b, "bounds");
    reject_unknown(b, "bounds", {"p_relative", "p_low_kN_per_m", "p_up_kN_per_m", "p_low", "p_up", "u_low", "u_up"});
    if_present(b, "p_relative", [&](const Json& v) {
      const double r = read_number(v, "bounds.p_relative");
      if (!(r >= 0)) throw ConfigError("bounds.p_relative: must be >= 0");
      c.p_relative = r;
    });
    const std::string lo = c.p_key("p_low"), up = c.p_key("p_up");
    if (b.contains(lo)) c.p_low = p_vector(b.at(lo), "bounds." + lo);
    if (b.contains(up)) c.p_up = p_vector(b.at(up), "bounds." + up);
    if (c.p_relative && (c.p_low || c.p_up)) throw ConfigError("bounds: give either p_relative or absolute p bounds");
    if_present(b, "u_low", [&](const Json& v) { c.u_low = u_vector(v, "bounds.u_low"); });
    if_present(b, "u_up", [&](const Json& v) { c.u_up = u_vector(v, "bounds.u_up"); });
  });
  if (c.p_low && c.p_up && (c.p_low->array() > c.p_up->array()).any()) throw ConfigError("bounds: p_low > p_up");
  if (c.u_low && c.u_up && (c.u_low->array() > c.u_up->array()).any()) throw ConfigError("bounds: u_low > u_up");

  if_present(j, "solver", [&](const Json& s) {
    require_object(s, "solver");
    reject_unknown(s, "solver", {"inner", "J_tol", "max_outer", "armijo_beta", "armijo_sigma", "max_backtracks",
                                 "min_rel_progress", "gd", "inner_dp0_kN_per_m", "inner_dp0", "compare_gd_iterations"});
    if_present(s, "inner", [&](const Json& v) { c.inner = read_string(v, "solver.inner"); });
    if (c.inner != "riccati" && c.inner != "gradient_descent")
      throw ConfigError("solver.inner: expected 'riccati' or 'gradient_descent'");
    if_present(s, "J_tol", [&](const Json& v) { c.J_tol = read_number(v, "solver.J_tol"); });
    if_present(s, "max_outer", [&](const Json& v) { c.max_outer = read_count(v, "solver.max_outer"); });
    if_present(s, "armijo_beta", [&](const Json& v) { c.armijo_beta = read_number(v, "solver.armijo_beta"); });
    if_present(s, "armijo_sigma", [&](const Json& v) { c.armijo_sigma = read_number(v, "solver.armijo_sigma"); });
    if_present(s, "max_backtracks", [&](const Json& v) { c.max_backtracks = read_count(v, "solver.max_backtracks"); });
    if_present(s, "min_rel_progress", [&](const Json& v) { c.min_rel_progress = read_number(v, "solver.min_rel_progress"); });
    if_present(s, "compare_gd_iterations",
               [&](const Json& v) { c.compare_gd_iterations = read_count(v, "solver.compare_gd_iterations"); });
    const std::string dk = c.p_key("inner_dp0");
    if (s.contains(dk)) c.inner_dp0 = p_vector(s.at(dk), "solver." + dk);
    if_present(s, "gd", [&](const Json& g) {
      require_object(g, "solver.gd");
      reject_unknown(g, "solver.gd", {"tol", "max_iter", "armijo_beta", "armijo_sigma", "max_backtracks", "min_rel_decrease"});
      if_present(g, "tol", [&](const Json& v) { c.gd.tol = read_number(v, "solver.gd.tol"); });
      if_present(g, "max_iter", [&](const Json& v) { c.gd.max_iter = read_count(v, "solver.gd.max_iter"); });
      if_present(g, "armijo_beta", [&](const Json& v) { c.gd.armijo_beta = read_number(v, "solver.gd.armijo_beta"); });
      if_present(g, "armijo_sigma", [&](const Json& v) { c.gd.armijo_sigma = read_number(v, "solver.gd.armijo_sigma"); });
      if_present(g, "max_backtracks", [&](const Json& v) { c.gd.max_backtracks = read_count(v, "solver.gd.max_backtracks"); });
      if_present(g, "min_rel_decrease", [&](const Json& v) { c.gd.min_rel_decrease = read_number(v, "solver.gd.min_rel_decrease"); });
    });
  });
  if (!(c.J_tol > 0)) throw ConfigError("solver.J_tol: must be > 0");
  if (!(c.armijo_beta > 0 && c.armijo_beta < 1)) throw ConfigError("solver.armijo_beta: must lie in (0,1)");
  if (!(c.armijo_sigma > 0 && c.armijo_sigma < 1)) throw ConfigError("solver.armijo_sigma: must lie in (0,1)");
  if (!(c.gd.armijo_beta > 0 && c.gd.armijo_beta < 1)) throw ConfigError("solver.gd.armijo_beta: must lie in (0,1)");
  if (!(c.gd.armijo_sigma > 0 && c.gd.armijo_sigma < 1)) throw ConfigError("solver.gd.armijo_sigma: must lie in (0,1)");
  if (!(c.gd.tol > 0)) throw ConfigError("solver.gd.tol: must be > 0");
  if (c.inner == "riccati" && !c.p_fixed) throw ConfigError("solver.inner: 'riccati' requires start.p_fixed = true");
  if (c.inner == "riccati" && !(c.alpha_u > 0))
    throw ConfigError("weights.alpha_u: the Riccati inner solver needs R = alpha_u I positive definite (alpha_u > 0)");

  if_present(j, "output", [&](const Json& o) {
    require_object(o, "output");
    reject_unknown(o, "output", {"dir", "y_iter"});
    if_present(o, "dir", [&](const Json& v) { c.out_dir = read_string(v, "output.dir"); });
    if_present(o, "y_iter", [&](const Json& v) {
      if (!v.is_array()) throw ConfigError("output.y_iter: expected an array");
      c.y_iter.clear();
      for (std::size_t i = 0; i < v.size(); ++i) c.y_iter.push_back(read_count(v[i], "output.y_iter[" + std::to_string(i) + "]"));
    });
  });

  if_present(j, "verify", [&](const Json& v) {
    require_object(v, "verify");
    reject_unknown(v, "verify", {"jacobian_probes", "jacobian_tol", "adjoint_pairs", "adjoint_tol", "fd_directions",
                                 "gradient_tol", "riccati_gd_tol", "normal_residual_tol", "gd_reference_tol",
                                 "gd_reference_max_iter", "certificate_iterations"});
    auto& s = c.verify;
    if_present(v, "jacobian_probes", [&](const Json& x) { s.jacobian_probes = read_count(x, "verify.jacobian_probes"); });
    if_present(v, "jacobian_tol", [&](const Json& x) { s.jacobian_tol = read_number(x, "verify.jacobian_tol"); });
    if_present(v, "adjoint_pairs", [&](const Json& x) { s.adjoint_pairs = read_count(x, "verify.adjoint_pairs"); });
    if_present(v, "adjoint_tol", [&](const Json& x) { s.adjoint_tol = read_number(x, "verify.adjoint_tol"); });
    if_present(v, "fd_directions", [&](const Json& x) { s.fd_directions = read_count(x, "verify.fd_directions"); });
    if_present(v, "gradient_tol", [&](const Json& x) { s.gradient_tol = read_number(x, "verify.gradient_tol"); });
    if_present(v, "riccati_gd_tol", [&](const Json& x) { s.riccati_gd_tol = read_number(x, "verify.riccati_gd_tol"); });
    if_present(v, "normal_residual_tol", [&](const Json& x) { s.normal_residual_tol = read_number(x, "verify.normal_residual_tol"); });
    if_present(v, "gd_reference_tol", [&](const Json& x) { s.gd_reference_tol = read_number(x, "verify.gd_reference_tol"); });
    if_present(v, "gd_reference_max_iter", [&](const Json& x) { s.gd_reference_max_iter = read_count(x, "verify.gd_reference_max_iter"); });
    if_present(v, "certificate_iterations", [&](const Json& x) { s.certificate_iterations = read_count(x, "verify.certificate_iterations"); });
  });
  return c;
}

inline Json to_json(const ExperimentConfig& c) {
  using detail::write_matrix;
  using detail::write_vector;
  Json j;
  j["schema"] = c.schema;
  j["name"] = c.name;
  Json m;
  m["type"] = c.model_type;
  if (c.quarter_car_model()) {
    m["m1_kg"] = c.quarter_car.m1_kg;
    m["m2_kg"] = c.quarter_car.m2_kg;
    m["k2_kN_per_m"] = c.quarter_car.k2_kN_per_m;
    m["d1_kN_s_per_m"] = c.quarter_car.d1_kN_s_per_m;
    m["c"] = c.quarter_car.c;
  } else {
    m["A"] = write_matrix(c.linear.A);
    m["Bu"] = write_matrix(c.linear.Bu);
    m["Bp"] = write_matrix(c.linear.Bp);
    m["C"] = write_matrix(c.linear.C);
    m["Du"] = write_matrix(c.linear.Du);
    m["Dp"] = write_matrix(c.linear.Dp);
    m["x0"] = write_vector(c.linear.x0);
  }
  if (c.jacobian_fault) m["jacobian_fault"] = Json{{"mapping", c.jacobian_fault->mapping}, {"scale", c.jacobian_fault->scale}};
  j["model"] = m;
  j["grid"] = Json{{"t0", c.t0}, {"tf", c.tf}, {"dt", c.dt}, {"substeps", c.substeps}};
  j["weights"] = Json{{"Q", write_matrix(c.Q)}, {"T", write_matrix(c.T)}, {"alpha_u", c.alpha_u}, {"alpha_p", c.alpha_p}};
  Json r;
  r["source"] = c.reference_source;
  r[c.p_key("p_ref")] = write_vector(c.p_ref);
  r["road"] = Json{{"seed", c.road.seed},
                   {"bump_count", c.road.bump_count},
                   {"amplitude_min_m", c.road.amplitude_min},
                   {"amplitude_max_m", c.road.amplitude_max},
                   {"width_min_s", c.road.width_min},
                   {"width_max_s", c.road.width_max},
                   {"allow_negative", c.road.allow_negative}};
  if (!c.u_ref_file.empty()) r["u_ref_file"] = c.u_ref_file;
  j["reference"] = r;
  Json s;
  s["u"] = c.start_u;
  if (c.p0) s[c.p_key("p0")] = write_vector(*c.p0);
  s["p_fixed"] = c.p_fixed;
  j["start"] = s;
  Json b = Json::object();
  if (c.p_relative) b["p_relative"] = *c.p_relative;
  if (c.p_low) b[c.p_key("p_low")] = write_vector(*c.p_low);
  if (c.p_up) b[c.p_key("p_up")] = write_vector(*c.p_up);
  if (c.u_low) b["u_low"] = write_vector(*c.u_low);
  if (c.u_up) b["u_up"] = write_vector(*c.u_up);
  j["bounds"] = b;
  Json sv;
  sv["inner"] = c.inner;
  sv["J_tol"] = c.J_tol;
  sv["max_outer"] = c.max_outer;
  sv["armijo_beta"] = c.armijo_beta;
  sv["armijo_sigma"] = c.armijo_sigma;
  sv["max_backtracks"] = c.max_backtracks;
  sv["min_rel_progress"] = c.min_rel_progress;
  sv["compare_gd_iterations"] = c.compare_gd_iterations;
  if (c.inner_dp0) sv[c.p_key("inner_dp0")] = write_vector(*c.inner_dp0);
  sv["gd"] = Json{{"tol", c.gd.tol},
                  {"max_iter", c.gd.max_iter},
                  {"armijo_beta", c.gd.armijo_beta},
                  {"armijo_sigma", c.gd.armijo_sigma},
                  {"max_backtracks", c.gd.max_backtracks},
                  {"min_rel_decrease", c.gd.min_rel_decrease}};
  j["solver"] = sv;
  j["output"] = Json{{"dir", c.out_dir}, {"y_iter", c.y_iter}};
  const auto& v = c.verify;
  j["verify"] = Json{{"jacobian_probes", v.jacobian_probes},
                     {"jacobian_tol", v.jacobian_tol},
                     {"adjoint_pairs", v.adjoint_pairs},
                     {"adjoint_tol", v.adjoint_tol},
                     {"fd_directions", v.fd_directions},
                     {"gradient_tol", v.gradient_tol},
                     {"riccati_gd_tol", v.riccati_gd_tol},
                     {"normal_residual_tol", v.normal_residual_tol},
                     {"gd_reference_tol", v.gd_reference_tol},
                     {"gd_reference_max_iter", v.gd_reference_max_iter},
                     {"certificate_iterations", v.certificate_iterations}};
  return j;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  Json j;
  try {
    j = Json::parse(is, nullptr, true, true);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config: JSON parse error: ") + e.what());
  }
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_config(j, dir.empty() ? "." : dir.string());
}

// ---------------------------------------------------------------------------
// Assembly

struct Experiment {
  ExperimentConfig cfg;
  ModelInterface model;
  TimeGrid grid;
  Reference reference;
  TrackingProblem problem;
  InputPair start;
  GaussNewtonConfig gn;
  DirectGradientConfig dg;
};

inline ModelInterface inject_jacobian_fault(ModelInterface m, const JacobianFault& f) {
  auto scaled = [s = f.scale](JacobianFn fn) -> JacobianFn {
    return [fn = std::move(fn), s](double t, const Vector& x, const Vector& u, const Vector& p) -> Matrix {
      return s * fn(t, x, u, p);
    };
  };
  if (f.mapping == "f_x") m.f_x = scaled(m.f_x);
  if (f.mapping == "f_u") m.f_u = scaled(m.f_u);
  if (f.mapping == "f_p") m.f_p = scaled(m.f_p);
  if (f.mapping == "h_x") m.h_x = scaled(m.h_x);
  if (f.mapping == "h_u") m.h_u = scaled(m.h_u);
  if (f.mapping == "h_p") m.h_p = scaled(m.h_p);
  return m;
}

inline ModelInterface build_model(const ExperimentConfig& c) {
  ModelInterface m;
  if (c.quarter_car_model()) {
    const auto& q = c.quarter_car;
    m = quarter_car_model(QuarterCarParams::from_kilo(q.m1_kg, q.m2_kg, q.k2_kN_per_m, q.d1_kN_s_per_m, q.c));
  } else {
    m = linear_model(c.linear);
  }
  if (c.jacobian_fault) m = inject_jacobian_fault(std::move(m), *c.jacobian_fault);
  return m;
}

/// Reference input u_ref on the grid: the road profile in every channel, zero, or a CSV file.
inline GridSignal reference_input(const ExperimentConfig& c, const TimeGrid& grid, std::size_t nu) {
  if (c.reference_source == "zero") return GridSignal::zeros(grid, nu);
  if (c.reference_source == "file") {
    const auto path = (std::filesystem::path(c.base_dir) / c.u_ref_file).string();
    GridSignal u = read_csv(path);
    if (!(u.grid() == grid)) throw ConfigError("reference.u_ref_file: grid does not match the configured grid");
    if (u.dim() != nu) throw ConfigError("reference.u_ref_file: expected " + std::to_string(nu) + " value columns");
    return u;
  }
  Matrix v(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(nu));
  for (std::size_t j = 0; j < nu; ++j) {
    RoadProfileSpec s = c.road;
    s.seed += j;
    v.col(static_cast<Eigen::Index>(j)) = road_profile(s, grid).values().col(0);
  }
  return GridSignal(grid, std::move(v));
}

inline Experiment build_experiment(const ExperimentConfig& c) {
  ModelInterface model = build_model(c);
  const TimeGrid grid = TimeGrid::with_step(c.t0, c.tf, c.dt);
  const double ps = c.p_scale();
  const Vector p_ref = c.p_ref * ps;
  Reference ref = generate_reference(model, InputPair(reference_input(c, grid, model.nu), p_ref), grid, c.substeps);
  const Vector p0 = c.p0 ? Vector(*c.p0 * ps) : p_ref;

  BoxBounds bounds = BoxBounds::unbounded(model.nu, model.np);
  if (c.p_relative) {
    bounds.p_low = p0 - *c.p_relative * p0.cwiseAbs();
    bounds.p_up = p0 + *c.p_relative * p0.cwiseAbs();
  }
  if (c.p_low) bounds.p_low = *c.p_low * ps;
  if (c.p_up) bounds.p_up = *c.p_up * ps;
  if (c.u_low) bounds.u_low = *c.u_low;
  if (c.u_up) bounds.u_up = *c.u_up;

  GridSignal u0 = c.start_u == "reference" ? ref.inputs.u : GridSignal::zeros(grid, model.nu);
  InputPair start(std::move(u0), p0);
  if (c.p_fixed && (p0.array() < bounds.p_low.array() || p0.array() > bounds.p_up.array()).any())
    throw ConfigError("start: fixed p lies outside the p bounds");

  TrackingProblem prob{model, grid, ref.y, c.Q, c.T, c.alpha_u, c.alpha_p, bounds,
                       c.p_fixed ? std::optional<Vector>(p0) : std::nullopt, c.substeps};
  try {
    prob.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("problem: ") + e.what());
  }

  GaussNewtonConfig gn;
  gn.J_tol = c.J_tol;
  gn.max_outer = c.max_outer;
  gn.armijo_beta = c.armijo_beta;
  gn.armijo_sigma = c.armijo_sigma;
  gn.max_backtracks = c.max_backtracks;
  gn.min_rel_progress = c.min_rel_progress;
  gn.inner = c.inner == "riccati" ? InnerSolver::riccati : InnerSolver::gradient_descent;
  gn.gd = c.gd;
  if (c.inner_dp0) gn.inner_dp0 = Vector(*c.inner_dp0 * ps);

  DirectGradientConfig dg;
  dg.J_tol = c.J_tol;
  dg.max_iter = c.compare_gd_iterations;
  dg.armijo_beta = c.armijo_beta;
  dg.armijo_sigma = c.armijo_sigma;
  dg.max_backtracks = c.max_backtracks;
  dg.min_rel_progress = c.min_rel_progress;

  return Experiment{c, std::move(model), grid, std::move(ref), std::move(prob), std::move(start), gn, dg};
}

// ---------------------------------------------------------------------------
// Output helpers

namespace detail {

inline std::string ensure_dir(const std::string& dir) {
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string in_dir(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path + " for writing");
  os << text;
  if (!os) throw Error("write failed: " + path);
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// Doubles are written with %.17g; non-finite values become null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vec(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

inline Json cost_json(const CostBreakdown& c) {
  return Json{{"J", num(c.total)},
              {"data_misfit", num(c.data_misfit)},
              {"terminal_misfit", num(c.terminal_misfit)},
              {"reg_u", num(c.reg_u)},
              {"reg_p", num(c.reg_p)}};
}

}  // namespace detail

inline std::string iterations_csv(const SolveReport& rep) {
  std::ostringstream os;
  const std::size_t np = rep.final.p.size();
  os << "k,J,data_misfit,terminal_misfit,reg_u,reg_p,gamma";
  for (std::size_t i = 0; i < np; ++i) os << ",p_" << i;
  os << '\n';
  for (const auto& it : rep.iterates) {
    os << it.k << ',' << format_double(it.cost.total) << ',' << format_double(it.cost.data_misfit) << ','
       << format_double(it.cost.terminal_misfit) << ',' << format_double(it.cost.reg_u) << ','
       << format_double(it.cost.reg_p) << ',' << format_double(it.gamma);
    for (Eigen::Index i = 0; i < it.p.size(); ++i) os << ',' << format_double(it.p(i));
    os << '\n';
  }
  return os.str();
}

inline std::string inner_csv(const std::vector<InnerIterate>& diag) {
  std::ostringstream os;
  os << "iter,J_alpha,grad_norm,step\n";
  for (const auto& d : diag)
    os << d.iter << ',' << format_double(d.J_alpha) << ',' << format_double(d.grad_norm) << ','
       << format_double(d.step) << '\n';
  return os.str();
}

inline Json report_json(const Experiment& ex, const SolveReport& rep) {
  using detail::num;
  using detail::vec;
  Json j;
  j["name"] = ex.cfg.name;
  j["method"] = rep.method;
  j["inner"] = ex.cfg.inner;
  j["termination"] = to_string(rep.termination);
  j["message"] = rep.message;
  j["iterations"] = rep.iterates.empty() ? 0 : rep.iterates.back().k;
  j["J0"] = num(rep.iterates.front().cost.total);
  j["J_final"] = num(rep.iterates.back().cost.total);
  j["J_ratio"] = num(rep.iterates.back().cost.total / rep.iterates.front().cost.total);
  j["p_final"] = vec(rep.final.p);
  if (ex.cfg.quarter_car_model()) j["p_final_kN_per_m"] = vec(rep.final.p / ex.cfg.p_scale());
  j["p_low"] = vec(ex.problem.bounds.p_low);
  j["p_up"] = vec(ex.problem.bounds.p_up);
  Json its = Json::array();
  for (const auto& it : rep.iterates) {
    Json r = detail::cost_json(it.cost);
    r["k"] = it.k;
    r["p"] = vec(it.p);
    r["gamma"] = num(it.gamma);
    r["backtracks"] = it.backtracks;
    r["directional_derivative"] = num(it.directional_derivative);
    r["du_norm"] = num(it.du_norm);
    r["dp_norm"] = num(it.dp_norm);
    r["inner_iterations"] = it.inner_iterations;
    r["inner_stop"] = it.inner_stop;
    r["stepped"] = it.stepped;
    its.push_back(r);
  }
  j["iterates"] = its;
  const auto cert = descent_certificates(rep);
  Json cj;
  cj["all_descent"] = cert.all_descent;
  cj["all_monotone"] = cert.all_monotone;
  cj["theorem_setting"] = rep.theorem_setting;
  cj["coercivity_ok"] = cert.coercivity_ok;
  Json items = Json::array();
  for (const auto& c : cert.items)
    items.push_back(Json{{"k", c.k},
                         {"directional_derivative", num(c.directional_derivative)},
                         {"descent", c.descent},
                         {"monotone", c.monotone},
                         {"step_length_ratio", num(c.step_length_ratio)},
                         {"coercivity_margin", num(c.coercivity_margin)},
                         {"coercivity_checked", c.coercivity_checked},
                         {"coercivity_ok", c.coercivity_ok}});
  cj["items"] = items;
  j["certificates"] = cj;
  j["warnings"] = rep.warnings;
  return j;
}

// ---------------------------------------------------------------------------
// Commands

/// Writes y_ref.csv, u_ref.csv and x_ref.csv.
inline void cmd_simulate(const Experiment& ex, const std::string& out) {
  detail::ensure_dir(out);
  write_csv(detail::in_dir(out, "y_ref.csv"), ex.reference.y);
  write_csv(detail::in_dir(out, "u_ref.csv"), ex.reference.inputs.u);
  write_csv(detail::in_dir(out, "x_ref.csv"), ex.reference.x);
}

/// Runs Gauss-Newton and writes report.json, iterations.csv, u_final.csv,
/// y_final.csv, y_iter_{k}.csv and inner_{k}.csv.
inline SolveReport cmd_solve(const Experiment& ex, const std::string& out) {
  GaussNewtonConfig gn = ex.gn;
  gn.keep_outputs = true;
  SolveReport rep = gauss_newton_solve(ex.problem, ex.start, gn);
  detail::ensure_dir(out);
  detail::write_json(detail::in_dir(out, "report.json"), report_json(ex, rep));
  detail::write_text(detail::in_dir(out, "iterations.csv"), iterations_csv(rep));
  write_csv(detail::in_dir(out, "u_final.csv"), rep.final.u);
  write_csv(detail::in_dir(out, "y_final.csv"), rep.y_final);
  for (std::size_t k : ex.cfg.y_iter)
    if (k < rep.outputs.size()) write_csv(detail::in_dir(out, "y_iter_" + std::to_string(k) + ".csv"), rep.outputs[k]);
  for (std::size_t k = 0; k < rep.inner.size(); ++k)
    detail::write_text(detail::in_dir(out, "inner_" + std::to_string(k) + ".csv"), inner_csv(rep.inner[k]));
  return rep;
}

struct CompareResult {
  SolveReport gn;
  SolveReport gd;
  double J0 = 0.0;
  std::optional<std::size_t> gn_crossing;
  std::optional<std::size_t> gd_crossing;
};

/// First iteration with J <= fraction * J0.
inline std::optional<std::size_t> crossing_iteration(const SolveReport& rep, double J0, double fraction = 0.1) {
  for (const auto& it : rep.iterates)
    if (it.cost.total <= fraction * J0) return it.k;
  return std::nullopt;
}

inline std::string compare_csv(const CompareResult& r) {
  std::ostringstream os;
  os << "iter,J_gn,J_gd\n";
  const std::size_t rows = std::max(r.gn.iterates.size(), r.gd.iterates.size());
  for (std::size_t i = 0; i < rows; ++i) {
    os << i << ',';
    if (i < r.gn.iterates.size()) os << format_double(r.gn.iterates[i].cost.total);
    os << ',';
    if (i < r.gd.iterates.size()) os << format_double(r.gd.iterates[i].cost.total);
    os << '\n';
  }
  return os.str();
}

/// Gauss-Newton against direct projected gradient descent from the same start.
/// Writes compare.csv and compare_summary.json.
inline CompareResult cmd_compare(const Experiment& ex, const std::string& out) {
  if (!ex.problem.reduced()) throw ConfigError("start.p_fixed: compare requires a p-fixed problem");
  GaussNewtonConfig gn = ex.gn;
  gn.keep_outputs = false;
  CompareResult r{gauss_newton_solve(ex.problem, ex.start, gn), direct_gradient_solve(ex.problem, ex.start, ex.dg), 0.0,
                  std::nullopt, std::nullopt};
  r.J0 = r.gn.iterates.front().cost.total;
  r.gn_crossing = crossing_iteration(r.gn, r.J0);
  r.gd_crossing = crossing_iteration(r.gd, r.J0);
  detail::ensure_dir(out);
  detail::write_text(detail::in_dir(out, "compare.csv"), compare_csv(r));
  auto cross = [](const std::optional<std::size_t>& k) { return k ? Json(*k) : Json(nullptr); };
  Json s{{"J0", detail::num(r.J0)},
         {"threshold", detail::num(0.1 * r.J0)},
         {"gn_crossing_iteration", cross(r.gn_crossing)},
         {"gd_crossing_iteration", cross(r.gd_crossing)},
         {"gn_iterations", r.gn.iterates.back().k},
         {"gd_iterations", r.gd.iterates.back().k},
         {"J_gn_final", detail::num(r.gn.iterates.back().cost.total)},
         {"J_gd_final", detail::num(r.gd.iterates.back().cost.total)}};
  detail::write_json(detail::in_dir(out, "compare_summary.json"), s);
  return r;
}

// ---------------------------------------------------------------------------
// Verification battery

struct CheckResult {
  std::string name;
  bool passed = false;
  bool skipped = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

namespace detail {

/// Smooth random signal: a handful of random sinusoids per channel.
inline GridSignal random_signal(std::mt19937_64& rng, const TimeGrid& grid, std::size_t dim, double scale) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> uf(0.0, 1.0);
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(dim));
  for (std::size_t j = 0; j < dim; ++j) {
    for (int m = 0; m < 6; ++m) {
      const double a = n(rng), w = 2.0 * std::numbers::pi * (0.2 + 3.0 * uf(rng)), ph = 2.0 * std::numbers::pi * uf(rng);
      for (std::size_t k = 0; k < grid.node_count(); ++k)
        v(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) += scale * a * std::sin(w * (grid.node(k) - grid.t0()) + ph);
    }
  }
  return GridSignal(grid, std::move(v));
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, const Vector& scale) {
  std::normal_distribution<double> d(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng) * scale(i);
  return v;
}

}  // namespace detail

struct AdjointCheck {
  double worst = 0.0;  // max |<S'du,dy> - <du,S'*dy>| / (|du||dy|)
};

/// Adjoint identity over random pairs, with the p-part included when p is free.
inline AdjointCheck adjoint_identity_check(const LinearizedModel& lin, std::mt19937_64& rng, std::size_t pairs,
                                           const Vector& p_scale) {
  AdjointCheck out;
  for (std::size_t i = 0; i < pairs; ++i) {
    const GridSignal du = detail::random_signal(rng, lin.grid, lin.nu, 1.0);
    const GridSignal dy = detail::random_signal(rng, lin.grid, lin.ny, 1.0);
    const Vector dp = detail::random_vector(rng, static_cast<Eigen::Index>(lin.np), p_scale);
    const GridSignal s = sensitivity_apply(lin, du, dp);
    const Pullback pb = pullback(lin, weighted_cotangent(dy));
    const double lhs = l2_inner(s, dy);
    const double rhs = l2_inner(du, riesz(lin.grid, pb.u_bar)) + dp.dot(pb.p_bar);
    const double scale = std::sqrt(l2_norm_sq(du) + dp.squaredNorm()) * l2_norm(dy);
    out.worst = std::max(out.worst, std::abs(lhs - rhs) / scale);
  }
  return out;
}

/// Relative error |dJ_fd - dJ| / max(|dJ|, tiny) of central differences along
/// random directions, worst over the directions, at the given step.
template <class CostFn>
double directional_fd_error(CostFn&& J, const std::function<double(const GridSignal&, const Vector&)>& dJ,
                            const std::vector<std::pair<GridSignal, Vector>>& dirs, double eps) {
  double worst = 0.0;
  for (const auto& [du, dp] : dirs) {
    const double fd = (J(du * eps, Vector(dp * eps)) - J(du * -eps, Vector(dp * -eps))) / (2.0 * eps);
    const double an = dJ(du, dp);
    worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(an), 1e-300));
  }
  return worst;
}

inline std::vector<std::pair<GridSignal, Vector>> random_directions(std::mt19937_64& rng, const TrackingProblem& prob,
                                                                    std::size_t count, double u_scale,
                                                                    const Vector& p_scale) {
  std::vector<std::pair<GridSignal, Vector>> dirs;
  for (std::size_t i = 0; i < count; ++i) {
    GridSignal du = detail::random_signal(rng, prob.grid, prob.model.nu, u_scale);
    Vector dp = prob.reduced() ? Vector(Vector::Zero(static_cast<Eigen::Index>(prob.model.np)))
                               : detail::random_vector(rng, static_cast<Eigen::Index>(prob.model.np), p_scale);
    dirs.emplace_back(std::move(du), std::move(dp));
  }
  return dirs;
}

/// The verify battery. Runs every check and returns the results in order.
inline std::vector<CheckResult> run_verification(const Experiment& ex, std::uint64_t seed) {
  const auto& v = ex.cfg.verify;
  const auto& prob = ex.problem;
  std::mt19937_64 rng(seed);
  std::vector<CheckResult> out;
  const InputPair at = prob.effective(ex.start);
  const Vector p_scale = at.p.cwiseAbs().cwiseMax(1.0) * 1e-3;

  {
    const double xs = std::max(1e-3, ex.reference.x.values().cwiseAbs().maxCoeff());
    const double us = std::max(1e-3, max_abs(ex.reference.inputs.u));
    const auto jc = check_jacobians(ex.model, rng, static_cast<int>(v.jacobian_probes), xs, us,
                                    at.p.cwiseAbs().cwiseMax(1.0), prob.grid.t0(), prob.grid.tf());
    out.push_back({"jacobian_consistency", jc.worst <= v.jacobian_tol, false, jc.worst, v.jacobian_tol,
                   "worst mapping " + jc.worst_name});
  }

  const LinearizedModel lin = linearize(prob, at);
  {
    const auto ac = adjoint_identity_check(lin, rng, v.adjoint_pairs, prob.reduced() ? Vector(Vector::Zero(at.p.size())) : p_scale);
    out.push_back({"adjoint_identity", ac.worst <= v.adjoint_tol, false, ac.worst, v.adjoint_tol,
                   std::to_string(v.adjoint_pairs) + " random pairs"});
  }

  const AuxProblem aux = make_aux_problem(prob, lin);
  const double u_scale = std::max(1e-3, max_abs(ex.reference.inputs.u));
  {
    const auto dirs = random_directions(rng, prob, v.fd_directions, u_scale, p_scale);
    const GridSignal du0 = detail::random_signal(rng, prob.grid, prob.model.nu, u_scale);
    const Vector dp0 = Vector::Zero(at.p.size());
    auto [gu, gp] = aux_gradient(aux, du0, dp0);
    auto J = [&](const GridSignal& d, const Vector& p) { return aux_cost(aux, du0 + d, dp0 + p); };
    auto dJ = [&](const GridSignal& d, const Vector& p) { return l2_inner(gu, d) + gp.dot(p); };
    const double err = directional_fd_error(J, dJ, dirs, 1e-3);
    out.push_back({"aux_gradient_fd", err <= v.gradient_tol, false, err, v.gradient_tol, "central differences, eps 1e-3"});
  }
  {
    const auto dirs = random_directions(rng, prob, v.fd_directions, u_scale, p_scale);
    const CostGradient g = cost_gradient(prob, lin);
    auto J = [&](const GridSignal& d, const Vector& p) {
      return evaluate_cost(prob, InputPair(at.u + d, at.p + p)).total;
    };
    auto dJ = [&](const GridSignal& d, const Vector& p) { return g.apply(d, p); };
    const double e3 = directional_fd_error(J, dJ, dirs, 1e-3);
    const double e4 = directional_fd_error(J, dJ, dirs, 1e-4);
    const double err = std::min(e3, e4);
    out.push_back({"cost_gradient_fd", err <= v.gradient_tol, false, err, v.gradient_tol,
                   "central differences, eps 1e-3: " + format_double(e3) + ", eps 1e-4: " + format_double(e4)});
  }

  if (prob.reduced() && prob.alpha_u > 0.0) {
    auto [rs, art] = solve_aux_riccati(aux);
    GdSettings s = ex.cfg.gd;
    s.tol = v.gd_reference_tol;
    s.max_iter = v.gd_reference_max_iter;
    s.min_rel_decrease = 0.0;
    const AuxSolution gd = solve_aux_gd(aux, s);
    const double diff = l2_norm(rs.du - gd.du) / std::max(l2_norm(gd.du), 1e-300);
    out.push_back({"riccati_vs_gd", diff <= v.riccati_gd_tol, false, diff, v.riccati_gd_tol,
                   "gd " + std::to_string(gd.iterations) + " iterations, stop " + gd.stop_reason + ", riccati substeps " +
                       std::to_string(art.substeps)});
    const bool setting = detail::in_theorem_setting(prob);
    CheckResult nr{"normal_equation_residual", false, !setting, 0.0, v.normal_residual_tol, ""};
    if (setting) {
      nr.value = normal_equation_parts(lin, rs.du, prob.alpha_u).relative_to_rhs();
      nr.passed = nr.value <= v.normal_residual_tol;
      nr.detail = "Riccati du, relative to the right-hand side";
    } else {
      nr.passed = true;
      nr.detail = "skipped: defined for Q = I, T = 0 only";
    }
    out.push_back(nr);
  } else {
    out.push_back({"riccati_vs_gd", true, true, 0.0, v.riccati_gd_tol, "skipped: needs p fixed and alpha_u > 0"});
  }

  {
    GaussNewtonConfig gn = ex.gn;
    gn.max_outer = v.certificate_iterations;
    gn.keep_outputs = false;
    const SolveReport rep = gauss_newton_solve(prob, ex.start, gn);
    const auto cert = descent_certificates(rep);
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& c : cert.items) worst = std::max(worst, c.directional_derivative);
    const bool ok = cert.all_descent && cert.all_monotone && cert.coercivity_ok;
    std::string d = std::to_string(cert.items.size()) + " directions, descent " + (cert.all_descent ? "yes" : "no") +
                    ", monotone " + (cert.all_monotone ? "yes" : "no");
    if (rep.theorem_setting) d += std::string(", coercivity ") + (cert.coercivity_ok ? "yes" : "no");
    out.push_back({"descent_certificates", ok, false, cert.items.empty() ? 0.0 : worst, 0.0, d});
  }
  return out;
}

inline Json verification_json(const std::vector<CheckResult>& checks) {
  Json a = Json::array();
  bool all = true;
  for (const auto& c : checks) {
    all = all && c.passed;
    a.push_back(Json{{"name", c.name},
                     {"passed", c.passed},
                     {"skipped", c.skipped},
                     {"value", detail::num(c.value)},
                     {"threshold", detail::num(c.threshold)},
                     {"detail", c.detail}});
  }
  return Json{{"all_passed", all}, {"checks", a}};
}

/// Runs the battery and writes verify.json. Returns the results.
inline std::vector<CheckResult> cmd_verify(const Experiment& ex, const std::string& out, std::uint64_t seed) {
  if (ex.cfg.inner == "riccati" && !(ex.problem.alpha_u > 0.0))
    throw ConfigError("weights.alpha_u: R = alpha_u I is not positive definite; the Riccati solver cannot run");
  auto checks = run_verification(ex, seed);
  detail::ensure_dir(out);
  detail::write_json(detail::in_dir(out, "verify.json"), verification_json(checks));
  return checks;
}

}  // namespace gnoc
