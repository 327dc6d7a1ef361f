// Command-line front end: one subcommand per module operation, JSON on stdout
// (or --json FILE).  Exit codes: 0 ok, 2 precondition/usage, 3 surgery failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

#include "sphmap/sphmap.hpp"

using namespace sphmap;

namespace {

struct Common {
  std::string config_file;
  std::map<std::string, std::string> flags;  // config key -> value
  std::string input_csv;
  std::string json_out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key = value config file; flags override it");
  sub->add_option("--input", c.input_csv, "read the field from a CSV export instead of a preset");
  sub->add_option("--json", c.json_out, "write the JSON report here instead of stdout");
  const std::vector<std::pair<std::string, std::string>> keys{
      {"domain", "box or ball"},        {"n", "dimension N (2 or 3)"},    {"res", "lattice resolution"},
      {"p", "Sobolev exponent"},        {"lambda", "auto or a value"},    {"delta", "boundary threshold"},
      {"r", "cover radius override"},   {"preset", "map preset"},         {"degree", "preset degree"},
      {"seed", "preset seed"},          {"centre", "hedgehog centre x,y[,z]"},
      {"positive", "dipole + charge"},  {"negative", "dipole - charge"},  {"xi", "constant value"},
      {"cell-scale", "charge cube side"}, {"family", "dual or bumps"},    {"output", "output directory"},
      {"workers", "worker budget"}};
  for (const auto& [k, help] : keys) {
    auto* opt = sub->add_option_function<std::string>(
        "--" + k, [&c, k](const std::string& v) { c.flags[k] = v; }, help);
    opt->type_name("VALUE");
  }
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_file.empty() ? RunConfig{} : read_config(c.config_file);
  for (const auto& [k, v] : c.flags) {
    std::string key = k == "cell-scale" ? "cell_scale" : k == "n" ? "N" : k;
    apply_setting(cfg, key, v);
  }
  return cfg;
}

GridMap load_map(const Common& c, const RunConfig& cfg) {
  if (!c.input_csv.empty()) return read_csv(c.input_csv, cfg.domain_spec(), cfg.resolution);
  return make_map(cfg);
}

void emit(const Common& c, const Json& j) {
  if (c.json_out.empty()) {
    std::cout << dump(j);
    return;
  }
  std::ofstream out(c.json_out);
  require(bool(out), ErrorCode::Io, "cannot open " + c.json_out);
  out << dump(j);
}

Json header(const char* command, const RunConfig& cfg) {
  return Json{{"schema", kSchemaVersion}, {"command", command}, {"config", to_json(cfg)}};
}

std::vector<TestFunction> family_for(const RunConfig& cfg, const GridMap& u, const ChargeSet& cs) {
  if (cfg.family == "dual") return make_dual_family(u.domain(), cs, u.h());
  const DomainSpec& d = u.domain();
  std::vector<TestFunction> f;
  for (double s : {0.3, 0.5, 0.7}) f.push_back(make_bump(d.centre(), s * d.inradius()));
  return f;
}

std::string output_path(const RunConfig& cfg, const std::string& name) {
  if (cfg.output.empty()) return name;
  std::filesystem::create_directories(cfg.output);
  return (std::filesystem::path(cfg.output) / name).string();
}

int fail_json(const std::string& kind, const std::string& code, const std::string& msg, int exit_code) {
  std::cerr << Json{{"error", kind}, {"code", code}, {"message", msg}}.dump() << "\n";
  return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sphere-valued Sobolev map tools"};
  app.require_subcommand(1);
  Common c;

  auto* jac = app.add_subcommand("jacobian", "pairings of the distributional Jacobian with a test family");
  auto* deg = app.add_subcommand("degree", "degree of the trace on a sphere");
  auto* chg = app.add_subcommand("charges", "detect point charges");
  auto* con = app.add_subcommand("connection", "minimal connection of a charge set");
  auto* sur = app.add_subcommand("surgery", "replace one ball");
  auto* apx = app.add_subcommand("approximate", "run the approximation pipeline");
  auto* ver = app.add_subcommand("verify", "run the pipeline and recompute its estimates");
  auto* exp = app.add_subcommand("export", "write the field as VTK and/or CSV");
  for (auto* s : {jac, deg, chg, con, sur, apx, ver, exp}) add_common(s, c);

  std::string at = "", charges_file;
  double radius = 0.25, ball_r = 0.0;
  std::string kind = "bad", format = "vtk";
  deg->add_option("--at", at, "sphere centre x,y[,z] (default: domain centre)");
  deg->add_option("--radius", radius, "sphere radius");
  con->add_option("--charges", charges_file, "charge JSON file (default: detect from the map)");
  sur->add_option("--at", at, "ball centre, or boundary point for kind=boundary");
  sur->add_option("--ball-r", ball_r, "ball radius r")->required();
  sur->add_option("--kind", kind, "bad, good or boundary")->check(CLI::IsMember({"bad", "good", "boundary"}));
  exp->add_option("--format", format, "vtk, csv or both")->check(CLI::IsMember({"vtk", "csv", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail_json("usage", e.get_name(), e.what(), 2);
  }

  try {
    RunConfig cfg = resolve(c);
    const bool pipeline_run = apx->parsed() || ver->parsed();
    cfg.validate(pipeline_run);
    const GridMap u = load_map(c, cfg);
    Json out = header(app.get_subcommands().front()->get_name().c_str(), cfg);
    int code = 0;

    if (jac->parsed()) {
      const ChargeSet cs = detect_charges(u, cfg.cell_scale > 0 ? cfg.cell_scale : default_cell_scale(u.lattice()));
      const DField D = d_field(u);
      Json recs = Json::array();
      double worst = 0;
      for (const TestFunction& z : family_for(cfg, u, cs)) {
        const double v = pairing_with(D, z);
        worst = std::max(worst, std::abs(v));
        recs.push_back(pairing_record(z, v, u.resolution()));
      }
      out["pairings"] = recs;
      out["max_abs"] = worst;
    } else if (deg->parsed()) {
      const Vec3 x = at.empty() ? u.domain().centre() : io::parse_point("at", at);
      out["degree"] = to_json(sphere_degree(u, x, radius));
    } else if (chg->parsed()) {
      const LResult l = l_of_map(u, cfg.cell_scale);
      out["cell_scale"] = l.cell_scale;
      out["charges"] = to_json(l.charges);
    } else if (con->parsed()) {
      ChargeSet cs;
      if (!charges_file.empty()) {
        std::ifstream in(charges_file);
        require(bool(in), ErrorCode::Io, "cannot open " + charges_file);
        cs = charges_from_json(Json::parse(in), cfg.domain_spec());
      } else {
        cs = l_of_map(u, cfg.cell_scale).charges;
      }
      const MatchingSolution m = minimal_connection(cs, cfg.domain_spec());
      out["charges"] = to_json(cs);
      out["matching"] = to_json(m, cfg.N);
      if (cs.expanded_count() <= kBruteForceLimit) out["brute_force_L"] = brute_force_connection(cs, cfg.domain_spec());
    } else if (sur->parsed()) {
      const LResult l = l_of_map(u, cfg.cell_scale);
      SurgeryOptions opt;
      opt.p = cfg.p;
      opt.lambda = cfg.lambda.value_or(1.0);
      opt.cell_scale = cfg.cell_scale;
      opt.delta_cfg = cfg.delta;
      const Vec3 x = at.empty() ? u.domain().centre() : io::parse_point("at", at);
      const SurgeryResult s = kind == "bad"    ? replace_bad_ball(u, x, ball_r, l.matching, opt)
                              : kind == "good" ? replace_good_ball(u, x, ball_r, l.matching, opt)
                                               : replace_boundary_ball(u, x, ball_r, l.matching, opt);
      out["L"] = l.L;
      out["report"] = to_json(s.report, cfg.N);
      if (cfg.export_vtk) write_vtk(s.w.field(), output_path(cfg, "surgery_after.vtk"), &s.report.a_mask);
    } else if (apx->parsed() || ver->parsed()) {
      const PipelineConfig pc = cfg.pipeline();
      const ApproximationResult r = approximate(u, pc);
      out["report"] = to_json(r.report, cfg.N);
      if (ver->parsed() && r.report.ok()) out["verification"] = to_json(verify_estimates(u, r.w, r.report, cfg.p));
      if (cfg.export_vtk) {
        write_vtk(r.w.field(), output_path(cfg, "approx_w.vtk"), &r.report.a_mask);
        for (const Snapshot& s : r.report.snapshots)
          write_vtk(s.u.field(), output_path(cfg, "colour_" + std::to_string(s.colour) + ".vtk"), &s.e);
      }
      if (cfg.export_csv) write_csv(r.w.field(), output_path(cfg, "approx_w.csv"));
      if (!r.report.ok()) {
        code = 3;
        for (ErrorCode e : {ErrorCode::Precondition, ErrorCode::RadiusTooLarge, ErrorCode::NotOnBoundary,
                            ErrorCode::CurvedBoundaryUnsupported, ErrorCode::LatticeMismatch})
          if (r.report.failure_code == to_string(e)) code = 2;
      }
    } else if (exp->parsed()) {
      Json files = Json::array();
      if (format != "csv") {
        const std::string p = output_path(cfg, "field.vtk");
        write_vtk(u.field(), p);
        files.push_back(p);
      }
      if (format != "vtk") {
        const std::string p = output_path(cfg, "field.csv");
        write_csv(u.field(), p);
        files.push_back(p);
      }
      out["files"] = files;
    }
    emit(c, out);
    return code;
  } catch (const Error& e) {
    return fail_json("error", std::string(to_string(e.code())), e.what(), is_surgery_failure(e.code()) ? 3 : 2);
  } catch (const std::exception& e) {
    return fail_json("error", "Io", e.what(), 2);
  }
}
