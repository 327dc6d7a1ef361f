#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sphmap/sphmap.hpp"

using namespace sphmap;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("sphmap_test_" + name)).string();
}

}  // namespace

TEST(Json, ChargeRoundTrip) {
  DomainSpec d(3, Shape::Ball);
  ChargeSet cs;
  cs.domain = d;
  cs.charges = {{{0.1, -0.2, 0.3}, 2}, {{-0.5, 0.0, 0.25}, -1}};
  const Json j = to_json(cs);
  EXPECT_EQ(j[0]["x"].size(), 3u);
  EXPECT_EQ(j[1]["d"].get<int>(), -1);
  const ChargeSet back = charges_from_json(Json::parse(j.dump()), d);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.charges[i].x, cs.charges[i].x);
    EXPECT_EQ(back.charges[i].d, cs.charges[i].d);
  }
  EXPECT_THROW(charges_from_json(j, DomainSpec(2, Shape::Box)), Error);
}

TEST(Json, ReportIsDeterministicAndVersioned) {
  const GridMap u = make_map(DomainSpec(3, Shape::Ball), 24, PresetId::Hedgehog);
  PipelineConfig cfg;
  cfg.p = 2.5;
  const std::string a = dump(to_json(approximate(u, cfg).report, 3));
  const std::string b = dump(to_json(approximate(u, cfg).report, 3));
  EXPECT_EQ(a, b);
  const Json j = Json::parse(a);
  EXPECT_EQ(j["schema"].get<int>(), kSchemaVersion);
  EXPECT_EQ(j["branch"], "case2");
  EXPECT_TRUE(j.contains("case2"));
}

TEST(Json, NonFiniteWrittenAsString) {
  EXPECT_EQ(io::num(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(io::num(std::nan("")), "nan");
  EXPECT_EQ(io::num(1.5), 1.5);
}

TEST(Fields, CsvRoundTripIsExact) {
  for (int dim : {2, 3}) {
    DomainSpec d(dim, Shape::Ball);
    const GridMap u = make_map(d, 16, PresetId::SmoothRandom);
    const std::string path = tmp_path("field" + std::to_string(dim) + ".csv");
    write_csv(u.field(), path);
    const GridMap v = read_csv(path, d, 16);
    EXPECT_TRUE(v.values() == u.values());
    EXPECT_THROW(read_csv(path, d, 18), Error);
    std::remove(path.c_str());
  }
}

TEST(Fields, VtkHeaderAndCounts) {
  const GridMap u = make_map(DomainSpec(2, Shape::Box), 16, PresetId::Constant);
  std::vector<std::uint8_t> mask(u.lattice().cell_count(), 1);
  const std::string path = tmp_path("field.vtk");
  write_vtk(u.field(), path, &mask);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# vtk DataFile Version 3.0");
  int vectors = 0, cells = 0;
  while (std::getline(in, line)) {
    if (line == "POINT_DATA 289") ++vectors;
    if (line == "CELL_DATA 256") ++cells;
  }
  EXPECT_EQ(vectors, 1);
  EXPECT_EQ(cells, 1);
  std::remove(path.c_str());
}

TEST(Config, ParsesKeysAndComments) {
  const RunConfig c = parse_config(R"(
# pipeline run
domain = ball
N = 2
res = 64
p = 1.5   # between N-1 and N
lambda = auto
preset = "dipole"
positive = 0.1, 0.2
negative = -0.3,0.0
export_vtk = true
)");
  EXPECT_EQ(c.domain, Shape::Ball);
  EXPECT_EQ(c.N, 2);
  EXPECT_EQ(c.resolution, 64);
  EXPECT_EQ(c.p, 1.5);
  EXPECT_FALSE(c.lambda.has_value());
  EXPECT_EQ(c.preset, "dipole");
  ASSERT_TRUE(c.params.positive.has_value());
  EXPECT_EQ((*c.params.positive)[1], 0.2);
  EXPECT_TRUE(c.export_vtk);
  EXPECT_NO_THROW(c.validate(true));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse_config("colour = red"), Error);
  EXPECT_THROW(parse_config("p = fast"), Error);
  EXPECT_THROW(parse_config("just words"), Error);
  RunConfig c;
  c.N = 3;
  c.p = 1.5;
  EXPECT_THROW(c.validate(true), Error);
  EXPECT_NO_THROW(c.validate(false));
  c.p = 2.5;
  c.resolution = 12;
  EXPECT_THROW(c.validate(true), Error);
  c.resolution = 32;
  c.preset = "spiral";
  EXPECT_THROW(c.validate(false), Error);
}

TEST(Config, ExponentRangeProperty) {
  // p is accepted for pipeline runs exactly on the open interval (N-1, N)
  for (int N : {2, 3})
    for (int i = 0; i <= 40; ++i) {
      RunConfig c;
      c.N = N;
      c.p = 1.0 + 0.075 * i;
      const bool inside = N - 1 < c.p && c.p < N;
      bool accepted = true;
      try {
        c.validate(true);
      } catch (const Error&) {
        accepted = false;
      }
      EXPECT_EQ(accepted, inside) << N << " " << c.p;
    }
}
