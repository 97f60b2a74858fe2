#include "trom/io.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace trom::io {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV

std::optional<std::size_t> CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header.begin());
}

std::size_t CsvTable::require(const std::string& name) const {
  if (auto c = column(name)) return *c;
  throw SchemaError(path + ":1: missing required column '" + name + "'");
}

void CsvTable::fail(std::size_t row, const std::string& what) const {
  throw SchemaError(path + ":" + std::to_string(lines.at(row)) + ": " + what);
}

double CsvTable::number(std::size_t row, std::size_t col) const {
  const std::string& s = rows[row][col];
  if (s.empty()) fail(row, "empty value in column '" + header[col] + "'");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    fail(row, "column '" + header[col] + "': '" + s + "' is not a finite number");
  return v;
}

long long CsvTable::integer(std::size_t row, std::size_t col) const {
  const std::string& s = rows[row][col];
  if (s.empty()) fail(row, "empty value in column '" + header[col] + "'");
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE)
    fail(row, "column '" + header[col] + "': '" + s + "' is not an integer");
  return v;
}

CsvTable parse_csv(std::istream& in, const std::string& name) {
  CsvTable t;
  t.path = name;
  std::vector<std::string> fields;
  std::string field;
  std::size_t line = 1, record_line = 1;
  bool quoted = false, any = false, field_quoted = false;

  auto end_record = [&] {
    fields.push_back(field);
    field.clear();
    field_quoted = false;
    const bool blank = fields.size() == 1 && fields[0].empty();
    if (!blank) {
      if (t.header.empty()) {
        t.header = fields;
      } else {
        if (fields.size() != t.header.size())
          throw SchemaError(name + ":" + std::to_string(record_line) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " +
                            std::to_string(fields.size()));
        t.rows.push_back(fields);
        t.lines.push_back(record_line);
      }
    }
    fields.clear();
    any = false;
  };

  char ch;
  while (in.get(ch)) {
    if (!any) {
      record_line = line;
      any = true;
    }
    if (quoted) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get(ch);
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty() || field_quoted)
          throw SchemaError(name + ":" + std::to_string(line) + ": stray quote");
        quoted = field_quoted = true;
        break;
      case ',':
        fields.push_back(field);
        field.clear();
        field_quoted = false;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(ch);
    }
  }
  if (quoted) throw SchemaError(name + ": unterminated quoted field");
  if (any) end_record();
  if (t.header.empty()) throw SchemaError(name + ":1: missing header");
  for (auto& h : t.header) {
    h.erase(0, h.find_first_not_of(" \t"));
    h.erase(h.find_last_not_of(" \t") + 1);
  }
  std::set<std::string> seen;
  for (const auto& h : t.header)
    if (!seen.insert(h).second) throw SchemaError(name + ":1: duplicate column '" + h + "'");
  return t;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  return parse_csv(in, path.string());
}

void write_csv_row(std::ostream& os, const std::vector<std::string>& fields) {
  for (std::size_t k = 0; k < fields.size(); ++k) {
    if (k) os << ',';
    const std::string& f = fields[k];
    if (f.find_first_of(",\"\n\r") == std::string::npos) {
      os << f;
    } else {
      os << '"';
      for (char c : f) {
        if (c == '"') os << '"';
        os << c;
      }
      os << '"';
    }
  }
  os << '\n';
}

namespace {

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

std::vector<std::pair<std::string, std::size_t>> prefixed(const CsvTable& t, const std::string& pre) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (t.header[c].size() > pre.size() && t.header[c].compare(0, pre.size(), pre) == 0)
      out.emplace_back(t.header[c].substr(pre.size()), c);
  return out;
}

Group parse_group(const CsvTable& t, std::size_t r, std::size_t c) {
  const std::string& g = t.rows[r][c];
  if (g.empty() || g == "low" || g == "0") return Group::low;
  if (g == "high" || g == "1") return Group::high;
  t.fail(r, "group must be 'low' or 'high', found '" + g + "'");
}

struct StudentRows {
  std::vector<StudentId> order;
  std::unordered_map<StudentId, std::size_t> row;
};

StudentRows index_students(const CsvTable& t) {
  StudentRows s;
  const std::size_t c_id = t.require("student_id");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const StudentId id = t.integer(r, c_id);
    if (!s.row.emplace(id, r).second) t.fail(r, "duplicate student_id " + std::to_string(id));
    s.order.push_back(id);
  }
  return s;
}

std::map<StudentId, StudentExtras> read_extras(const CsvTable& t) {
  std::map<StudentId, StudentExtras> out;
  const std::size_t c_id = t.require("student_id");
  const auto c_group = t.column("group");
  const auto c_guar = t.column("guaranteed_school_id");
  const auto c_x = t.column("location_x");
  const auto c_y = t.column("location_y");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    StudentExtras e;
    if (c_group) e.group = parse_group(t, r, *c_group);
    if (c_guar && !t.rows[r][*c_guar].empty()) e.guaranteed = t.integer(r, *c_guar);
    if (c_x) e.x = t.number(r, *c_x);
    if (c_y) e.y = t.number(r, *c_y);
    out[t.integer(r, c_id)] = e;
  }
  return out;
}

// Ranked lists keyed by student, validated for contiguous ranks 1..K.
std::unordered_map<StudentId, std::vector<SchoolId>> read_rols(const CsvTable& t) {
  const std::size_t c_id = t.require("student_id");
  const std::size_t c_rank = t.require("rank");
  const std::size_t c_school = t.require("school_id");
  std::unordered_map<StudentId, std::vector<std::pair<long long, std::size_t>>> raw;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const long long rank = t.integer(r, c_rank);
    if (rank < 1) t.fail(r, "rank must be at least 1");
    raw[t.integer(r, c_id)].emplace_back(rank, r);
  }
  std::unordered_map<StudentId, std::vector<SchoolId>> out;
  for (auto& [id, entries] : raw) {
    std::sort(entries.begin(), entries.end());
    std::vector<SchoolId> rol;
    std::set<SchoolId> seen;
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto [rank, r] = entries[k];
      if (rank != static_cast<long long>(k + 1))
        t.fail(r, "ranks of student " + std::to_string(id) + " are not contiguous from 1");
      const SchoolId sc = t.integer(r, c_school);
      if (!seen.insert(sc).second)
        t.fail(r, "school " + std::to_string(sc) + " ranked twice by student " + std::to_string(id));
      rol.push_back(sc);
    }
    out[id] = std::move(rol);
  }
  return out;
}

}  // namespace

DatasetFiles read_dataset(const fs::path& dir) {
  const CsvTable st = read_csv(dir / "students.csv");
  const CsvTable alt = read_csv(dir / "alternatives.csv");
  const CsvTable rl = read_csv(dir / "rols.csv");

  DatasetFiles out;
  const StudentRows srows = index_students(st);
  const auto zcols = prefixed(st, "z_");
  const auto xcols = prefixed(alt, "x_");
  for (const auto& [n, c] : zcols) out.data.student_covariate_names.push_back(n);
  for (const auto& [n, c] : xcols) out.data.pair_covariate_names.push_back(n);
  const std::size_t c_u0 = st.require("outside_value");

  std::unordered_map<StudentId, std::size_t> pos;
  for (StudentId id : srows.order) {
    const std::size_t r = srows.row.at(id);
    Student s;
    s.id = id;
    s.outside_value = st.number(r, c_u0);
    s.student_covariates.resize(static_cast<Eigen::Index>(zcols.size()));
    for (std::size_t k = 0; k < zcols.size(); ++k)
      s.student_covariates[static_cast<Eigen::Index>(k)] = st.number(r, zcols[k].second);
    pos[id] = out.data.students.size();
    out.data.students.push_back(std::move(s));
  }

  const std::size_t a_id = alt.require("student_id");
  const std::size_t a_school = alt.require("school_id");
  const std::size_t a_p = alt.require("admit_prob");
  std::vector<std::vector<std::size_t>> alt_rows(out.data.students.size());
  for (std::size_t r = 0; r < alt.rows.size(); ++r) {
    const StudentId id = alt.integer(r, a_id);
    const auto it = pos.find(id);
    if (it == pos.end()) alt.fail(r, "student_id " + std::to_string(id) + " not in students.csv");
    alt_rows[it->second].push_back(r);
  }
  for (std::size_t i = 0; i < out.data.students.size(); ++i) {
    Student& s = out.data.students[i];
    const auto& rows = alt_rows[i];
    s.pair_covariates.resize(static_cast<Eigen::Index>(rows.size()),
                             static_cast<Eigen::Index>(xcols.size()));
    std::set<SchoolId> seen;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t r = rows[k];
      const SchoolId sc = alt.integer(r, a_school);
      if (!seen.insert(sc).second)
        alt.fail(r, "school " + std::to_string(sc) + " listed twice for student " + std::to_string(s.id));
      const double p = alt.number(r, a_p);
      if (!(p > 0.0 && p <= 1.0)) alt.fail(r, "admit_prob must lie in (0, 1]");
      s.schools.push_back(sc);
      s.admit_prob.push_back(p);
      for (std::size_t c = 0; c < xcols.size(); ++c)
        s.pair_covariates(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) =
            alt.number(r, xcols[c].second);
    }
  }

  const auto rols = read_rols(rl);
  {
    const std::size_t c_id = rl.require("student_id");
    const std::size_t c_school = rl.require("school_id");
    for (std::size_t r = 0; r < rl.rows.size(); ++r) {
      const StudentId id = rl.integer(r, c_id);
      const auto it = pos.find(id);
      if (it == pos.end()) rl.fail(r, "student_id " + std::to_string(id) + " not in students.csv");
      const SchoolId sc = rl.integer(r, c_school);
      const auto& schools = out.data.students[it->second].schools;
      if (std::find(schools.begin(), schools.end(), sc) == schools.end())
        rl.fail(r, "school " + std::to_string(sc) + " is not in the choice set of student " +
                       std::to_string(id));
    }
  }
  for (auto& s : out.data.students) {
    const auto it = rols.find(s.id);
    if (it != rols.end()) s.rol.ranked = it->second;
  }
  out.extras = read_extras(st);
  out.data.validate();
  return out;
}

void write_dataset(const fs::path& dir, const ChoiceDataset& data,
                   const std::map<StudentId, StudentExtras>& extras) {
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "students.csv");
    std::vector<std::string> h{"student_id"};
    for (const auto& n : data.student_covariate_names) h.push_back("z_" + n);
    for (const char* c : {"outside_value", "group", "guaranteed_school_id", "location_x", "location_y"})
      h.emplace_back(c);
    write_csv_row(os, h);
    for (const auto& s : data.students) {
      const auto it = extras.find(s.id);
      const StudentExtras e = it == extras.end() ? StudentExtras{} : it->second;
      std::vector<std::string> row{std::to_string(s.id)};
      for (Eigen::Index k = 0; k < s.student_covariates.size(); ++k)
        row.push_back(format_double(s.student_covariates[k]));
      row.push_back(format_double(s.outside_value));
      row.emplace_back(e.group == Group::high ? "high" : "low");
      row.push_back(e.guaranteed ? std::to_string(*e.guaranteed) : "");
      row.push_back(format_double(e.x));
      row.push_back(format_double(e.y));
      write_csv_row(os, row);
    }
  }
  {
    auto os = open_out(dir / "alternatives.csv");
    std::vector<std::string> h{"student_id", "school_id"};
    for (const auto& n : data.pair_covariate_names) h.push_back("x_" + n);
    h.emplace_back("admit_prob");
    write_csv_row(os, h);
    for (const auto& s : data.students)
      for (std::size_t j = 0; j < s.schools.size(); ++j) {
        std::vector<std::string> row{std::to_string(s.id), std::to_string(s.schools[j])};
        for (Eigen::Index k = 0; k < s.pair_covariates.cols(); ++k)
          row.push_back(format_double(s.pair_covariates(static_cast<Eigen::Index>(j), k)));
        row.push_back(format_double(s.admit_prob[j]));
        write_csv_row(os, row);
      }
  }
  {
    auto os = open_out(dir / "rols.csv");
    write_csv_row(os, {"student_id", "rank", "school_id"});
    for (const auto& s : data.students)
      for (std::size_t k = 0; k < s.rol.ranked.size(); ++k)
        write_csv_row(os, {std::to_string(s.id), std::to_string(k + 1), std::to_string(s.rol.ranked[k])});
  }
}

void write_eps(const fs::path& file, const SimulatedData& sim) {
  auto os = open_out(file);
  write_csv_row(os, {"student_id", "school_id", "w", "eps", "latent_cost"});
  for (std::size_t i = 0; i < sim.data.students.size(); ++i) {
    const Student& s = sim.data.students[i];
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < s.schools.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      write_csv_row(os, {std::to_string(s.id), std::to_string(s.schools[j]),
                         format_double(sim.net_utility(ii, jj)), format_double(sim.eps(ii, jj)),
                         format_double(sim.latent_cost.size() ? sim.latent_cost[ii] : 0.0)});
    }
  }
}

// ---------------------------------------------------------------------------
// Market

Market read_market(const fs::path& dir, std::uint64_t lottery_seed) {
  const CsvTable sc = read_csv(dir / "schools.csv");
  const CsvTable st = read_csv(dir / "students.csv");
  const CsvTable rl = read_csv(dir / "rols.csv");

  Market m;
  {
    const std::size_t c_id = sc.require("school_id");
    const std::size_t c_cap = sc.require("capacity");
    const auto c_pub = sc.column("is_public");
    const auto c_score = sc.column("score");
    const auto c_x = sc.column("location_x");
    const auto c_y = sc.column("location_y");
    std::set<SchoolId> seen;
    for (std::size_t r = 0; r < sc.rows.size(); ++r) {
      MarketSchool s;
      s.id = sc.integer(r, c_id);
      if (!seen.insert(s.id).second) sc.fail(r, "duplicate school_id " + std::to_string(s.id));
      const long long cap = sc.integer(r, c_cap);
      if (cap < 0) sc.fail(r, "capacity must be non-negative");
      s.capacity = static_cast<int>(cap);
      if (c_pub) {
        const std::string& v = sc.rows[r][*c_pub];
        if (v == "1" || v == "true") s.is_public = true;
        else if (v == "0" || v == "false" || v.empty()) s.is_public = false;
        else sc.fail(r, "is_public must be 0/1 or true/false");
      }
      if (c_score) s.score = sc.number(r, *c_score);
      if (c_x) s.x = sc.number(r, *c_x);
      if (c_y) s.y = sc.number(r, *c_y);
      m.schools.push_back(s);
    }
  }
  const auto extras = read_extras(st);
  const auto rols = read_rols(rl);
  const StudentRows srows = index_students(st);
  std::unordered_map<StudentId, std::size_t> pos;
  for (StudentId id : srows.order) {
    MarketStudent s;
    s.id = id;
    const StudentExtras& e = extras.at(id);
    s.group = e.group;
    s.guaranteed = e.guaranteed;
    s.x = e.x;
    s.y = e.y;
    if (const auto it = rols.find(id); it != rols.end()) s.rol = it->second;
    pos[id] = m.students.size();
    m.students.push_back(std::move(s));
  }
  {
    const std::size_t c_id = rl.require("student_id");
    for (std::size_t r = 0; r < rl.rows.size(); ++r)
      if (!pos.count(rl.integer(r, c_id))) rl.fail(r, "student_id not in students.csv");
  }

  m.priority.assign(m.students.size(), std::vector<std::uint8_t>(m.schools.size(), 0));
  if (fs::exists(dir / "priorities.csv")) {
    const CsvTable pr = read_csv(dir / "priorities.csv");
    const std::size_t c_id = pr.require("student_id");
    const std::size_t c_school = pr.require("school_id");
    const auto c_level = pr.column("priority");
    for (std::size_t r = 0; r < pr.rows.size(); ++r) {
      const auto it = pos.find(pr.integer(r, c_id));
      if (it == pos.end()) pr.fail(r, "student_id not in students.csv");
      std::size_t j = 0;
      try {
        j = m.school_index(pr.integer(r, c_school));
      } catch (const std::exception&) {
        pr.fail(r, "school_id not in schools.csv");
      }
      const long long level = c_level ? pr.integer(r, *c_level) : 1;
      if (level < 0 || level > 255) pr.fail(r, "priority must lie in 0..255");
      m.priority[it->second][j] = static_cast<std::uint8_t>(level);
    }
  }
  m.draw_lottery(lottery_seed);
  m.public_candidates_from_locations();
  try {
    m.validate();
  } catch (const std::exception& e) {
    throw SchemaError(dir.string() + ": " + e.what());
  }
  return m;
}

void write_assignment(std::ostream& os, const Assignment& a, const Market& market) {
  write_csv_row(os, {"student_id", "school_id", "via", "rank_position"});
  for (std::size_t i = 0; i < market.students.size(); ++i)
    write_csv_row(os, {std::to_string(market.students[i].id),
                       a.match[i] ? std::to_string(*a.match[i]) : "", to_string(a.via[i]),
                       std::to_string(a.rank_position[i])});
}

Assignment read_assignment(const fs::path& file, const Market& market) {
  const CsvTable t = read_csv(file);
  const std::size_t c_id = t.require("student_id");
  const std::size_t c_school = t.require("school_id");
  const std::size_t c_via = t.require("via");
  const std::size_t c_rank = t.require("rank_position");
  std::unordered_map<StudentId, std::size_t> pos;
  for (std::size_t i = 0; i < market.students.size(); ++i) pos[market.students[i].id] = i;

  Assignment a;
  const std::size_t n = market.students.size();
  a.match.assign(n, std::nullopt);
  a.via.assign(n, Via::unassigned);
  a.rank_position.assign(n, 0);
  std::vector<bool> seen(n, false);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto it = pos.find(t.integer(r, c_id));
    if (it == pos.end()) t.fail(r, "student_id not in the market");
    if (seen[it->second]) t.fail(r, "student listed twice");
    seen[it->second] = true;
    const std::size_t i = it->second;
    if (!t.rows[r][c_school].empty()) a.match[i] = t.integer(r, c_school);
    const std::string& via = t.rows[r][c_via];
    bool ok = false;
    for (Via v : {Via::rol, Via::guaranteed, Via::nearest_public, Via::unassigned})
      if (via == to_string(v)) {
        a.via[i] = v;
        ok = true;
      }
    if (!ok) t.fail(r, "unknown via '" + via + "'");
    a.rank_position[i] = static_cast<int>(t.integer(r, c_rank));
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i]) throw SchemaError(file.string() + ": student " + std::to_string(market.students[i].id) +
                                    " missing from the assignment");
  return a;
}

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw SchemaError("config: " + where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw SchemaError("config: unknown key '" + k + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError("config: " + where + "." + key + ": " + e.what());
  }
}

template <class T>
void maybe(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

Eigen::VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

MarginProfile parse_profile(const json& j, const std::string& where) {
  check_keys(j, {"label", "fixed"}, where);
  MarginProfile p;
  maybe(j, "label", p.label, where);
  if (j.contains("fixed")) p.fixed = get<std::map<std::string, double>>(j, "fixed", where);
  return p;
}

SimDesign parse_design(const json& j) {
  const std::string w = "design";
  check_keys(j, {"preset", "n", "j", "beta", "ranges", "latent", "reps"}, w);
  SimDesign d;
  std::size_t n = 1000;
  maybe(j, "n", n, w);
  if (j.contains("preset")) {
    const auto preset = get<std::string>(j, "preset", w);
    if (preset == "no_latent") d = no_latent_design(n);
    else if (preset == "latent") d = latent_design(n);
    else throw SchemaError("config: design.preset must be 'no_latent' or 'latent'");
  } else {
    if (!j.contains("beta") || !j.contains("ranges"))
      throw SchemaError("config: design needs a preset or both beta and ranges");
    d.n = n;
  }
  maybe(j, "j", d.j, w);
  maybe(j, "reps", d.reps, w);
  if (j.contains("beta")) d.beta = vec(get<std::vector<double>>(j, "beta", w));
  if (j.contains("ranges"))
    d.covariate_ranges = get<std::vector<std::pair<double, double>>>(j, "ranges", w);
  if (j.contains("latent")) {
    const json& l = j.at("latent");
    if (l.is_null()) {
      d.latent.reset();
    } else {
      check_keys(l, {"gamma", "sigma2"}, "design.latent");
      LatentDesign ld = d.latent.value_or(LatentDesign{Eigen::VectorXd::Constant(1, 0.5), 0.25});
      if (l.contains("gamma")) ld.gamma = vec(get<std::vector<double>>(l, "gamma", "design.latent"));
      maybe(l, "sigma2", ld.sigma2, "design.latent");
      d.latent = ld;
    }
  }
  return d;
}

}  // namespace

std::uint64_t RunConfig::require_seed(const char* command) const {
  if (!seed) throw SchemaError(std::string("config: '") + command + "' needs an explicit seed");
  return *seed;
}

RunConfig parse_config(const json& j) {
  check_keys(j, {"spec_version", "seed", "threads", "debug", "design", "fit", "em", "bootstrap",
                 "predict", "counterfactual", "market"},
             "config");
  RunConfig c;
  if (!j.contains("spec_version")) throw SchemaError("config: missing spec_version");
  c.version = get<int>(j, "spec_version", "config");
  if (c.version != kSchemaVersion)
    throw SchemaError("config: unsupported spec_version " + std::to_string(c.version));
  if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
  maybe(j, "threads", c.threads, "config");
  if (c.threads == 0) throw SchemaError("config: threads must be positive");
  maybe(j, "debug", c.debug, "config");
  const std::uint64_t seed = c.seed.value_or(0);
  c.mle.seed = seed;
  c.em.seed = seed;

  if (j.contains("design")) {
    c.design = parse_design(j.at("design"));
    c.design->seed = seed;
    try {
      c.design->validate();
    } catch (const std::exception& e) {
      throw SchemaError(std::string("config: design: ") + e.what());
    }
  }
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    check_keys(f, {"starts", "start_lo", "start_hi", "grad_tol", "max_iter"}, "fit");
    maybe(f, "starts", c.mle.starts, "fit");
    maybe(f, "start_lo", c.mle.start_lo, "fit");
    maybe(f, "start_hi", c.mle.start_hi, "fit");
    maybe(f, "grad_tol", c.mle.optim.grad_tol, "fit");
    maybe(f, "max_iter", c.mle.optim.max_iter, "fit");
    if (c.mle.starts < 1) throw SchemaError("config: fit.starts must be at least 1");
  }
  if (j.contains("em")) {
    const json& e = j.at("em");
    check_keys(e, {"draws", "tol", "max_iter", "sigma2_start", "monotone_guard", "m_step_max_iter",
                   "start_lo", "start_hi"},
               "em");
    maybe(e, "draws", c.em.draws, "em");
    maybe(e, "tol", c.em.tol, "em");
    maybe(e, "max_iter", c.em.max_iter, "em");
    maybe(e, "sigma2_start", c.em.sigma2_start, "em");
    maybe(e, "monotone_guard", c.em.monotone_guard, "em");
    maybe(e, "m_step_max_iter", c.em.m_step.max_iter, "em");
    maybe(e, "start_lo", c.em.start_lo, "em");
    maybe(e, "start_hi", c.em.start_hi, "em");
    if (c.em.draws == 0) throw SchemaError("config: em.draws must be positive");
  }
  if (j.contains("bootstrap")) {
    const json& b = j.at("bootstrap");
    check_keys(b, {"replicates", "level", "random_starts"}, "bootstrap");
    maybe(b, "replicates", c.bootstrap.replicates, "bootstrap");
    maybe(b, "level", c.bootstrap.level, "bootstrap");
    maybe(b, "random_starts", c.bootstrap.random_starts, "bootstrap");
    if (!(c.bootstrap.level > 0.0 && c.bootstrap.level < 1.0))
      throw SchemaError("config: bootstrap.level must lie in (0, 1)");
  }
  if (j.contains("predict")) {
    const json& p = j.at("predict");
    check_keys(p, {"tau", "margin"}, "predict");
    maybe(p, "tau", c.predict.tau, "predict");
    if (p.contains("margin")) {
      const json& m = p.at("margin");
      const std::string w = "predict.margin";
      check_keys(m, {"varying", "grid", "profiles", "low_profile", "student_fixed", "outside_value",
                     "admit_prob", "level"},
                 w);
      MarginSpec s;
      s.varying = get<std::string>(m, "varying", w);
      s.grid = get<std::vector<double>>(m, "grid", w);
      if (m.contains("profiles")) {
        s.profiles.clear();
        for (const auto& pj : m.at("profiles")) s.profiles.push_back(parse_profile(pj, w + ".profiles"));
      }
      if (m.contains("low_profile")) s.low_profile = parse_profile(m.at("low_profile"), w + ".low_profile");
      if (m.contains("student_fixed"))
        s.student_fixed = get<std::map<std::string, double>>(m, "student_fixed", w);
      if (m.contains("outside_value")) s.outside_value = get<double>(m, "outside_value", w);
      if (m.contains("admit_prob")) s.admit_prob = get<double>(m, "admit_prob", w);
      maybe(m, "level", s.level, w);
      c.predict.margin = s;
    }
  }
  if (j.contains("counterfactual")) {
    const json& f = j.at("counterfactual");
    check_keys(f, {"covariate", "value", "group"}, "counterfactual");
    CounterfactualSettings cf;
    cf.edit.covariate = get<std::string>(f, "covariate", "counterfactual");
    maybe(f, "value", cf.edit.value, "counterfactual");
    if (f.contains("group") && !f.at("group").is_null()) {
      const auto g = get<std::string>(f, "group", "counterfactual");
      if (g == "low") cf.edit.only_group = Group::low;
      else if (g == "high") cf.edit.only_group = Group::high;
      else throw SchemaError("config: counterfactual.group must be 'low', 'high' or null");
    }
    c.counterfactual = cf;
  }
  if (j.contains("market")) {
    const json& m = j.at("market");
    check_keys(m, {"lottery_seed"}, "market");
    if (m.contains("lottery_seed")) c.lottery_seed = get<std::uint64_t>(m, "lottery_seed", "market");
  }
  return c;
}

RunConfig read_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Results

static std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

json params_to_json(const ThresholdParams& p, const ChoiceDataset& data) {
  json j;
  j["pair_covariates"] = data.pair_covariate_names;
  j["beta"] = to_vec(p.beta);
  j["has_latent"] = p.has_latent;
  if (p.has_latent) {
    j["student_covariates"] = data.student_covariate_names;
    j["gamma"] = to_vec(p.gamma);
    j["sigma2"] = p.sigma2;
  }
  return j;
}

ThresholdParams params_from_json(const json& j) {
  ThresholdParams p;
  try {
    p.beta = vec(j.at("beta").get<std::vector<double>>());
    p.has_latent = j.value("has_latent", false);
    if (p.has_latent) {
      p.gamma = vec(j.at("gamma").get<std::vector<double>>());
      p.sigma2 = j.at("sigma2").get<double>();
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("params: ") + e.what());
  }
  return p;
}

json fit_to_json(const FitResult& fit, const ChoiceDataset& data) {
  json j;
  j["params"] = params_to_json(fit.params, data);
  const auto names = parameter_names(data, fit.params.has_latent);
  const Eigen::VectorXd flat = flatten(fit.params);
  json est = json::object();
  for (std::size_t k = 0; k < names.size(); ++k) est[names[k]] = flat[static_cast<Eigen::Index>(k)];
  j["estimates"] = est;
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["starts_tried"] = fit.starts_tried;
  j["notes"] = fit.notes;
  return j;
}

void add_intervals(json& out, const BootstrapResult& boot) {
  json iv = json::object();
  for (const auto& i : boot.intervals) iv[i.name] = {{"estimate", i.estimate}, {"lo", i.lo}, {"hi", i.hi}};
  out["intervals"] = iv;
  out["bootstrap"] = {{"requested", boot.requested}, {"dropped", boot.dropped}};
}

ThresholdParams read_params(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw SchemaError("cannot open " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(file.string() + ": " + e.what());
  }
  if (!j.contains("params")) throw SchemaError(file.string() + ": no 'params' block");
  return params_from_json(j.at("params"));
}

}  // namespace trom::io
