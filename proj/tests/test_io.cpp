#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "trom/io.hpp"
#include "trom/simulation.hpp"

using namespace trom;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("trom_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("csv parsing") {
  std::istringstream in("a,b,c\r\n1,\"x,y\",\"say \"\"hi\"\"\"\n2,,3\n");
  const io::CsvTable t = io::parse_csv(in, "t.csv");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][1] == "x,y");
  CHECK(t.rows[0][2] == "say \"hi\"");
  CHECK(t.rows[1][1].empty());
  CHECK(t.lines[1] == 3);

  std::istringstream ragged("a,b\n1,2\n3\n");
  const std::string msg = error_of([&] { io::parse_csv(ragged, "r.csv"); });
  CHECK(msg.find("r.csv") != std::string::npos);
  CHECK(msg.find("3") != std::string::npos);

  std::istringstream dup("a,a\n1,2\n");
  CHECK_THROWS_AS(io::parse_csv(dup, "d.csv"), io::SchemaError);

  std::ostringstream os;
  io::write_csv_row(os, {"plain", "with,comma", "with \"quote\""});
  CHECK(os.str() == "plain,\"with,comma\",\"with \"\"quote\"\"\"\n");
}

TEST_CASE("doubles keep 17 significant digits") {
  CHECK(io::format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(io::format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(io::format_double(2.0) == "2");
}

TEST_CASE("dataset round trip is byte stable") {
  SimDesign d = latent_design(25);
  d.seed = 3;
  const auto sim = generate(d, 0);
  const fs::path a = scratch("rt_a"), b = scratch("rt_b");
  io::write_dataset(a, sim.data);
  const io::DatasetFiles back = io::read_dataset(a);
  REQUIRE(back.data.n_students() == 25);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(back.data.students[i].pair_covariates == sim.data.students[i].pair_covariates);
    CHECK(back.data.students[i].student_covariates == sim.data.students[i].student_covariates);
    CHECK(back.data.students[i].rol.ranked == sim.data.students[i].rol.ranked);
  }
  io::write_dataset(b, back.data);
  for (const char* f : {"students.csv", "alternatives.csv", "rols.csv"}) CHECK(slurp(a / f) == slurp(b / f));
}

TEST_CASE("dataset schema errors name file and line") {
  const fs::path dir = scratch("schema");
  put(dir / "students.csv", "student_id,z_income,outside_value\n1,0.5,0\n2,0.1,0\n");
  put(dir / "alternatives.csv",
      "student_id,school_id,x_dist,admit_prob\n1,10,1.5,1\n1,11,2.5,0.5\n2,10,0.5,1\n2,11,1,1\n");
  put(dir / "rols.csv", "student_id,rank,school_id\n1,1,11\n2,1,10\n2,2,11\n");
  const io::DatasetFiles ok = io::read_dataset(dir);
  CHECK(ok.data.pair_covariate_names == std::vector<std::string>{"dist"});
  CHECK(ok.data.student_covariate_names == std::vector<std::string>{"income"});
  CHECK(ok.data.students[1].rol.ranked == std::vector<SchoolId>{10, 11});

  put(dir / "rols.csv", "student_id,rank,school_id\n1,1,11\n2,1,10\n2,3,11\n");
  std::string msg = error_of([&] { io::read_dataset(dir); });
  CHECK(msg.find("rols.csv") != std::string::npos);
  CHECK(msg.find("rols.csv:4:") != std::string::npos);

  put(dir / "rols.csv", "student_id,rank,school_id\n1,1,12\n");
  CHECK_THROWS_AS(io::read_dataset(dir), io::SchemaError);

  put(dir / "rols.csv", "student_id,rank,school_id\n");
  put(dir / "alternatives.csv",
      "student_id,school_id,x_dist,admit_prob\n1,10,1.5,1\n1,11,2.5,0\n2,10,0.5,1\n2,11,1,1\n");
  msg = error_of([&] { io::read_dataset(dir); });
  CHECK(msg.find("alternatives.csv") != std::string::npos);
  CHECK(msg.find("alternatives.csv:3:") != std::string::npos);

  put(dir / "alternatives.csv",
      "student_id,school_id,x_dist,admit_prob\n1,10,abc,1\n1,11,2.5,1\n2,10,0.5,1\n2,11,1,1\n");
  CHECK_THROWS_AS(io::read_dataset(dir), io::SchemaError);
}

TEST_CASE("config validation") {
  using nlohmann::json;
  const json good = {{"spec_version", 1}, {"seed", 5}, {"em", {{"draws", 50}}}};
  const io::RunConfig c = io::parse_config(good);
  CHECK(*c.seed == 5);
  CHECK(c.em.draws == 50);
  CHECK(c.em.seed == 5);
  CHECK(c.mle.seed == 5);

  CHECK_THROWS_AS(io::parse_config({{"seed", 5}}), io::SchemaError);
  CHECK_THROWS_AS(io::parse_config({{"spec_version", 2}}), io::SchemaError);
  CHECK_THROWS_AS(io::parse_config({{"spec_version", 1}, {"sede", 5}}), io::SchemaError);
  CHECK_THROWS_AS(io::parse_config({{"spec_version", 1}, {"em", {{"drawz", 5}}}}), io::SchemaError);
  CHECK_THROWS_AS(io::parse_config({{"spec_version", 1}, {"design", {{"preset", "latent"}, {"j", 1}}}}),
                  io::SchemaError);
  CHECK_THROWS_AS(io::parse_config({{"spec_version", 1}}).require_seed("fit"), io::SchemaError);

  const io::RunConfig d =
      io::parse_config({{"spec_version", 1}, {"seed", 2}, {"design", {{"preset", "no_latent"}, {"n", 50}}}});
  REQUIRE(d.design.has_value());
  CHECK(d.design->n == 50);
  CHECK(d.design->j == 15);
  CHECK(d.design->seed == 2);
}

TEST_CASE("results carry the AIC identity") {
  SimDesign d = no_latent_design(60);
  d.seed = 4;
  const auto sim = generate(d, 0);
  const FitResult fit = fit_mle(sim.data, {});
  const auto j = io::fit_to_json(fit, sim.data);
  CHECK(j["aic"].get<double>() == 2.0 * 4 - 2.0 * j["loglik"].get<double>());
  const ThresholdParams p = io::params_from_json(j["params"]);
  CHECK(p.beta == fit.params.beta);
}

TEST_CASE("market files") {
  const fs::path dir = scratch("market");
  put(dir / "schools.csv",
      "school_id,capacity,is_public,score,location_x,location_y\n1,1,0,0.9,0,0\n2,5,1,0.2,10,0\n");
  put(dir / "students.csv",
      "student_id,outside_value,group,guaranteed_school_id,location_x,location_y\n"
      "1,0,low,,0,0\n2,0,high,,0,0\n3,0,low,1,3,4\n");
  put(dir / "rols.csv", "student_id,rank,school_id\n1,1,1\n2,1,1\n");
  const Market m = io::read_market(dir, 9);
  REQUIRE(m.students.size() == 3);
  CHECK(m.students[2].guaranteed == SchoolId{1});
  REQUIRE(m.students[2].public_candidates.size() == 1);
  CHECK(m.students[2].public_candidates[0].distance_km == doctest::Approx(std::hypot(7.0, 4.0)));

  const Assignment a = fallback_assign(run_da(m), m);
  std::ostringstream os;
  io::write_assignment(os, a, m);
  const fs::path f = dir / "assignment.csv";
  put(f, os.str());
  const Assignment back = io::read_assignment(f, m);
  CHECK(back.match == a.match);
  CHECK(back.via == a.via);
  CHECK(back.rank_position == a.rank_position);

  put(dir / "priorities.csv", "student_id,school_id,priority\n2,1,3\n");
  const Market mp = io::read_market(dir, 9);
  const Assignment ap = run_da(mp);
  CHECK(ap.match[1] == SchoolId{1});

  put(dir / "schools.csv", "school_id,capacity,is_public,score,location_x,location_y\n1,-1,0,0.9,0,0\n");
  CHECK_THROWS_AS(io::read_market(dir, 9), io::SchemaError);
}
