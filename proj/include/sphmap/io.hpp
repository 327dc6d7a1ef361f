#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sphmap/pipeline.hpp"

namespace sphmap {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// JSON

namespace io {

inline Json vec(const Vec3& x, int dim) {
  Json a = Json::array();
  for (int i = 0; i < dim; ++i) a.push_back(x[i]);
  return a;
}

inline Vec3 vec_from(const Json& a) {
  require(a.is_array() && (a.size() == 2 || a.size() == 3), ErrorCode::Io, "expected a 2- or 3-vector");
  Vec3 x{0, 0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) x[i] = a[i].get<double>();
  return x;
}

inline Json domain(const DomainSpec& d) { return Json{{"shape", to_string(d.shape)}, {"N", d.dim}}; }

/// Non-finite values are written as strings so reports stay valid JSON.
inline Json num(double x) {
  if (std::isfinite(x)) return x;
  return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

}  // namespace io

inline Json to_json(const ChargeSet& cs) {
  Json a = Json::array();
  for (const Charge& c : cs.charges) a.push_back(Json{{"x", io::vec(c.x, cs.domain.dim)}, {"d", c.d}});
  return a;
}

inline ChargeSet charges_from_json(const Json& j, const DomainSpec& d) {
  const Json& a = j.is_object() ? j.at("charges") : j;
  require(a.is_array(), ErrorCode::Io, "charges must be an array");
  ChargeSet cs;
  cs.domain = d;
  for (const Json& c : a) {
    const Vec3 x = io::vec_from(c.at("x"));
    require(c.at("x").size() == std::size_t(d.dim), ErrorCode::Io, "charge dimension does not match the domain");
    cs.charges.push_back({x, c.at("d").get<int>()});
  }
  return cs;
}

inline Json to_json(const MatchingSolution& m, int dim) {
  Json pairs = Json::array();
  for (const MatchedPair& p : m.pairs)
    pairs.push_back(Json{{"positive", io::vec(p.positive, dim)},
                         {"negative", io::vec(p.negative, dim)},
                         {"positive_on_boundary", p.positive_on_boundary},
                         {"negative_on_boundary", p.negative_on_boundary},
                         {"cost", p.cost}});
  Json segs = Json::array();
  for (const Segment& s : m.segments()) segs.push_back(Json{io::vec(s.a, dim), io::vec(s.b, dim)});
  return Json{{"L", m.L}, {"pairs", pairs}, {"segments", segs}};
}

inline Json to_json(const DegreeResult& r) {
  return Json{{"degree", r.degree}, {"raw", r.raw}, {"residual", r.residual}};
}

inline Json to_json(const SliceSelection& s, int dim) {
  return Json{{"s", s.s},
              {"centre", io::vec(s.centre, dim)},
              {"surface_energy", s.surface_energy},
              {"surface_lp", s.surface_lp},
              {"bulk_energy", s.bulk_energy},
              {"bulk_lp", s.bulk_lp},
              {"c_slice", io::num(s.c_slice)},
              {"fubini_bound", s.fubini_bound},
              {"fubini_ok", s.fubini_ok},
              {"candidates", s.candidate_count},
              {"admissible", s.admissible_count},
              {"admissible_fraction", s.admissible_fraction},
              {"segment_widths", s.segment_widths},
              {"avoided_segments", s.avoided_segments},
              {"degree", s.degree},
              {"psi_width", s.psi_width}};
}

inline Json to_json(const SurgeryReport& r, int dim) {
  const BallGeometry& g = r.geometry;
  Json j{{"ball_id", r.ball_id},
         {"kind", to_string(r.kind)},
         {"branch", r.branch},
         {"centre", io::vec(g.centre, dim)},
         {"r", g.r},
         {"rho", g.rho},
         {"outer", g.outer()},
         {"multi_face", r.multi_face},
         {"slice", to_json(r.slice, dim)},
         {"energy", r.energy},
         {"threshold", r.threshold},
         {"epsilon", r.epsilon},
         {"epsilon_ok", r.epsilon_ok},
         {"homotopy", Json{{"method", r.homotopy_method}, {"iterations", r.homotopy_iterations}}},
         {"xi0", io::vec(r.xi0, dim)},
         {"trace_radius", r.trace_radius},
         {"a_measure", r.a_measure},
         {"a_fallback", r.a_fallback},
         {"lp_diff", r.lp_diff},
         {"grad_diff", r.grad_diff},
         {"grad_v_outer", r.grad_v_outer},
         {"grad_v_a", r.grad_v_a},
         {"c_lp", io::num(r.c_lp)},
         {"c_grad", io::num(r.c_grad)},
         {"c_grad_a", io::num(r.c_grad_a)},
         {"c_a", io::num(r.c_a)},
         {"L_before", r.L_before},
         {"L_after", r.L_after},
         {"inner_charges_after", r.inner_charges_after},
         {"locality_ok", r.locality_ok}};
  if (r.branch == "bad") j["volume_check"] = Json{{"c_lambda", io::num(r.c_lambda)}, {"ok", r.volume_ok}};
  if (r.branch == "good")
    j["a_bound"] = Json{{"cheb_integral", r.cheb_integral},
                        {"poincare_constant", r.poincare_constant},
                        {"poincare_rhs", r.poincare_rhs},
                        {"grad_v_slice_energy", r.grad_v_slice_energy},
                        {"ok", r.a_bound_ok},
                        {"eps_gap", r.eps_gap},
                        {"eps_bound", r.eps_bound}};
  return j;
}

inline Json to_json(const ColourStep& s) {
  return Json{{"colour", s.colour},
              {"balls", s.balls},
              {"lp_step", s.lp_step},
              {"grad_step", s.grad_step},
              {"c_step_lp", io::num(s.c_step_lp)},
              {"e_measure", s.e_measure},
              {"grad_uk_e", s.grad_uk_e},
              {"c_step_grad", io::num(s.c_step_grad)},
              {"e_bound", io::num(s.e_bound)},
              {"lp_cum", s.lp_cum},
              {"grad_cum", s.grad_cum},
              {"f_measure", s.f_measure},
              {"grad_u_f", s.grad_u_f},
              {"c_cum_lp", io::num(s.c_cum_lp)},
              {"c_cum_l2p", io::num(s.c_cum_l2p)},
              {"c_cum_grad", io::num(s.c_cum_grad)},
              {"f_subadditive", s.f_subadditive},
              {"L_after", s.L_after},
              {"charges_after", s.charges_after}};
}

inline Json to_json(const Case2Record& c, int dim) {
  return Json{{"alpha", io::vec(c.alpha, dim)},
              {"lp_u_alpha", c.lp_u_alpha},
              {"grad_lp", c.grad_lp},
              {"poincare", Json{{"measured", io::num(c.poincare_measured)},
                                {"reference", c.poincare_reference},
                                {"ok", c.poincare_ok}}},
              {"omega_measure", c.omega_measure},
              {"holder", Json{{"lhs", c.holder_lhs}, {"rhs", c.holder_rhs}, {"ok", c.holder_ok}}},
              {"chain", Json{{"lhs", c.chain_lhs}, {"mid", c.chain_mid}, {"rhs", c.chain_rhs}, {"c0", c.c0}, {"ok", c.chain_ok}}}};
}

inline Json to_json(const ApproximationReport& r, int dim) {
  Json j{{"schema", kSchemaVersion},
         {"status", r.status},
         {"branch", r.branch},
         {"p", r.p},
         {"L0", r.L0},
         {"r", r.r},
         {"lambda", r.lambda},
         {"lambda_source", r.lambda_source},
         {"delta", r.delta},
         {"r_below_floor", r.r_below_floor},
         {"theta", r.theta},
         {"colours", r.colours},
         {"ball_count", r.ball_count},
         {"surgeries", r.surgeries},
         {"skipped", r.skipped},
         {"good_to_bad_fallbacks", r.good_to_bad_fallbacks},
         {"a_measure", r.a_measure},
         {"lp_final", r.lp_final},
         {"grad_final", r.grad_final},
         {"w1p_final", r.w1p_final},
         {"grad_u", r.grad_u},
         {"grad_u_2p", r.grad_u_2p},
         {"grad_u_a", r.grad_u_a},
         {"c_final", io::num(r.c_final)},
         {"a_ratio", io::num(r.a_ratio)},
         {"a_ratio_L", io::num(r.a_ratio_L)},
         {"residual_charges", r.residual_charges},
         {"residual_jacobian", r.residual_jacobian},
         {"L_final", r.L_final}};
  if (!r.ok())
    j["failure"] = Json{{"ball", r.failed_ball}, {"code", r.failure_code}, {"message", r.failure_message}};
  if (r.case2) j["case2"] = to_json(*r.case2, dim);
  Json steps = Json::array(), surg = Json::array();
  for (const ColourStep& s : r.steps) steps.push_back(to_json(s));
  for (const SurgeryReport& s : r.surgery_reports) surg.push_back(to_json(s, dim));
  j["steps"] = steps;
  j["surgery_reports"] = surg;
  return j;
}

inline Json to_json(const VerificationRecord& v) {
  Json steps = Json::array();
  for (const ColourStep& s : v.steps) steps.push_back(to_json(s));
  return Json{{"schema", kSchemaVersion},
              {"w1p_lhs", v.w1p_lhs},
              {"w1p_rhs", v.w1p_rhs},
              {"c_w1p", io::num(v.c_w1p)},
              {"area_lhs", v.area_lhs},
              {"area_rhs", v.area_rhs},
              {"c_area", io::num(v.c_area)},
              {"L_used", v.L_used},
              {"L_method", v.L_method},
              {"steps_match_report", v.steps_match_report},
              {"f_subadditive", v.f_subadditive},
              {"all_finite", v.all_finite},
              {"steps", steps}};
}

/// One pairing record per test function.
inline Json pairing_record(const TestFunction& z, double value, int resolution) {
  return Json{{"zeta", z.id()}, {"value", value}, {"resolution", resolution}};
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Field files

/// VTK legacy ASCII structured points: node vectors, node activity, and an
/// optional cell mask.
inline void write_vtk(const VectorField& f, const std::string& path, const std::vector<std::uint8_t>* cell_mask = nullptr) {
  std::ofstream out(path);
  require(bool(out), ErrorCode::Io, "cannot open " + path);
  const Lattice& L = f.lattice;
  const int nz = L.dim == 3 ? L.n : 1;
  out << "# vtk DataFile Version 3.0\nsphmap field\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << L.n << " " << L.n << " " << nz << "\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "ORIGIN %.17g %.17g %.17g\n", L.origin[0], L.origin[1], L.origin[2]);
  out << buf;
  std::snprintf(buf, sizeof buf, "SPACING %.17g %.17g %.17g\n", L.h, L.h, L.dim == 3 ? L.h : 1.0);
  out << buf;
  out << "POINT_DATA " << L.node_count() << "\nVECTORS u double\n";
  for (const Vec3& v : f.values) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v[0], v[1], v[2]);
    out << buf;
  }
  out << "SCALARS active int 1\nLOOKUP_TABLE default\n";
  for (auto a : f.node_active) out << int(a) << "\n";
  if (cell_mask) {
    require(cell_mask->size() == L.cell_count(), ErrorCode::LatticeMismatch, "mask size does not match the lattice");
    out << "CELL_DATA " << L.cell_count() << "\nSCALARS mask int 1\nLOOKUP_TABLE default\n";
    for (auto a : *cell_mask) out << int(a) << "\n";
  }
  require(bool(out), ErrorCode::Io, "write failed: " + path);
}

/// CSV with header i,j,k,x,y,z,u0,u1,u2,active.
inline void write_csv(const VectorField& f, const std::string& path) {
  std::ofstream out(path);
  require(bool(out), ErrorCode::Io, "cannot open " + path);
  const Lattice& L = f.lattice;
  out << "i,j,k,x,y,z,u0,u1,u2,active\n";
  char buf[256];
  all_nodes(L).for_each([&](int i, int j, int k) {
    const std::size_t n = L.node_index(i, j, k);
    const Vec3 x = L.node_position(i, j, k);
    const Vec3& v = f.values[n];
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", i, j, k, x[0], x[1], x[2], v[0],
                  v[1], v[2], int(f.node_active[n]));
    out << buf;
  });
  require(bool(out), ErrorCode::Io, "write failed: " + path);
}

/// Reads a CSV written by write_csv onto the lattice of (d, resolution).
/// Values of inactive nodes are kept as written.
inline GridMap read_csv(const std::string& path, const DomainSpec& d, int resolution) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::Io, "cannot open " + path);
  VectorField f = VectorField::on(d, resolution);
  const Lattice& L = f.lattice;
  std::string line;
  std::getline(in, line);
  require(line.rfind("i,j,k,", 0) == 0, ErrorCode::Io, path + ": missing CSV header");
  std::vector<std::uint8_t> seen(L.node_count(), 0);
  std::size_t count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int i, j, k, act;
    double x, y, z, a, b, c;
    require(std::sscanf(line.c_str(), "%d,%d,%d,%lf,%lf,%lf,%lf,%lf,%lf,%d", &i, &j, &k, &x, &y, &z, &a, &b, &c, &act) == 10,
            ErrorCode::Io, path + ": malformed row '" + line + "'");
    require(i >= 0 && j >= 0 && k >= 0 && i < L.n && j < L.n && k < (L.dim == 3 ? L.n : 1), ErrorCode::LatticeMismatch,
            path + ": node index out of range");
    const std::size_t n = L.node_index(i, j, k);
    require(!seen[n], ErrorCode::Io, path + ": duplicate node");
    seen[n] = 1;
    ++count;
    f.values[n] = {a, b, c};
  }
  require(count == L.node_count(), ErrorCode::LatticeMismatch,
          path + ": expected " + std::to_string(L.node_count()) + " rows, got " + std::to_string(count));
  return GridMap(std::move(f));
}

// ---------------------------------------------------------------------------
// Run configuration

/// Plain key = value text.  '#' starts a comment; values may be quoted.
///
///   domain = box | ball        N = 2 | 3           resolution = <int>
///   p = <real>                 lambda = auto | <real>
///   delta = <real>             r = <real>          preset = <name>
///   degree = <int>             seed = <int>        centre = x,y[,z]
///   positive = x,y[,z]         negative = x,y[,z]  xi = x,y[,z]
///   cell_scale = <real>        family = dual | bumps
///   output = <dir>             export_vtk = true | false
///   export_csv = true | false  workers = <int>
struct RunConfig {
  Shape domain = Shape::Box;
  int N = 3;
  int resolution = 32;
  double p = 2.5;
  std::optional<double> lambda;
  double delta = 0.0;
  double r = 0.0;
  std::string preset = "hedgehog";
  PresetParams params;
  double cell_scale = 0.0;
  std::string family = "dual";
  std::string output;
  bool export_vtk = false;
  bool export_csv = false;
  int workers = 1;
  std::uint64_t seed = 1;

  DomainSpec domain_spec() const { return DomainSpec(N, domain); }

  PipelineConfig pipeline() const {
    PipelineConfig c;
    c.p = p;
    c.lambda = lambda;
    c.delta = delta;
    c.r = r;
    c.cell_scale = cell_scale;
    return c;
  }

  /// Checks shared by every run; pipeline runs also need N-1 < p < N and
  /// resolution >= 16.
  void validate(bool pipeline_run) const {
    require(N == 2 || N == 3, ErrorCode::Precondition, "N must be 2 or 3");
    require(resolution >= 8, ErrorCode::Precondition, "resolution must be at least 8");
    require(p >= 1.0, ErrorCode::Precondition, "p must be at least 1");
    if (pipeline_run) {
      require(N - 1 < p && p < N, ErrorCode::Precondition,
              "p = " + std::to_string(p) + " must satisfy N-1 < p < N for N = " + std::to_string(N));
      require(resolution >= 16, ErrorCode::Precondition, "pipeline runs need resolution >= 16");
    }
    require(!lambda || *lambda > 0, ErrorCode::Precondition, "lambda must be positive");
    require(delta >= 0 && r >= 0 && cell_scale >= 0, ErrorCode::Precondition, "delta, r and cell_scale must be >= 0");
    require(family == "dual" || family == "bumps", ErrorCode::Precondition, "family must be dual or bumps");
    require(workers >= 1, ErrorCode::Precondition, "workers must be >= 1");
    parse_preset(preset);
  }
};

namespace io {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorCode::Precondition, key + ": '" + v + "' is not a number");
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  require(used == v.size() && !v.empty(), ErrorCode::Precondition, key + ": '" + v + "' is not an integer");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorCode::Precondition, key + ": '" + v + "' is not a boolean");
}

inline Vec3 parse_point(const std::string& key, const std::string& v) {
  Vec3 x{0, 0, 0};
  std::stringstream ss(v);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    require(i < 3, ErrorCode::Precondition, key + ": too many components");
    x[i++] = parse_real(key, trim(part));
  }
  require(i >= 2, ErrorCode::Precondition, key + ": expected 2 or 3 components");
  return x;
}

}  // namespace io

/// Applies one key = value setting.  Unknown keys are errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string v = io::trim(value);
  if (key == "domain") c.domain = parse_shape(v);
  else if (key == "N" || key == "n") c.N = int(io::parse_int(key, v));
  else if (key == "resolution" || key == "res") c.resolution = int(io::parse_int(key, v));
  else if (key == "p") c.p = io::parse_real(key, v);
  else if (key == "lambda") c.lambda = v == "auto" ? std::nullopt : std::optional<double>(io::parse_real(key, v));
  else if (key == "delta") c.delta = io::parse_real(key, v);
  else if (key == "r") c.r = io::parse_real(key, v);
  else if (key == "preset") c.preset = v;
  else if (key == "degree") c.params.degree = int(io::parse_int(key, v));
  else if (key == "seed") c.seed = c.params.seed = std::uint64_t(io::parse_int(key, v));
  else if (key == "centre") c.params.centre = io::parse_point(key, v);
  else if (key == "positive") c.params.positive = io::parse_point(key, v);
  else if (key == "negative") c.params.negative = io::parse_point(key, v);
  else if (key == "xi") c.params.xi = io::parse_point(key, v);
  else if (key == "cell_scale") c.cell_scale = io::parse_real(key, v);
  else if (key == "family") c.family = v;
  else if (key == "output") c.output = v;
  else if (key == "export_vtk") c.export_vtk = io::parse_bool(key, v);
  else if (key == "export_csv") c.export_csv = io::parse_bool(key, v);
  else if (key == "workers") c.workers = int(io::parse_int(key, v));
  else fail(ErrorCode::Precondition, "unknown config key '" + key + "'");
}

inline RunConfig parse_config(const std::string& text, RunConfig c = {}) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::Precondition, "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = io::trim(line.substr(0, eq));
    std::string value = io::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    apply_setting(c, key, value);
  }
  return c;
}

inline RunConfig read_config(const std::string& path, RunConfig c = {}) {
  std::ifstream in(path);
  require(bool(in), ErrorCode::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(c));
}

inline Json to_json(const RunConfig& c) {
  auto opt_vec = [&](const std::optional<Vec3>& x) { return x ? io::vec(*x, c.N) : Json(nullptr); };
  return Json{{"domain", to_string(c.domain)},
              {"N", c.N},
              {"resolution", c.resolution},
              {"p", c.p},
              {"lambda", c.lambda ? Json(*c.lambda) : Json("auto")},
              {"delta", c.delta},
              {"r", c.r},
              {"preset", c.preset},
              {"degree", c.params.degree},
              {"seed", c.seed},
              {"centre", opt_vec(c.params.centre)},
              {"positive", opt_vec(c.params.positive)},
              {"negative", opt_vec(c.params.negative)},
              {"xi", opt_vec(c.params.xi)},
              {"cell_scale", c.cell_scale},
              {"family", c.family}};
}

inline GridMap make_map(const RunConfig& c) {
  return make_map(c.domain_spec(), c.resolution, parse_preset(c.preset), c.params);
}

}  // namespace sphmap
