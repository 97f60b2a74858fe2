#include "trom/matching.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>

#include "trom/rng.hpp"

namespace trom {

const char* to_string(Via v) {
  switch (v) {
    case Via::rol: return "rol";
    case Via::guaranteed: return "guaranteed";
    case Via::nearest_public: return "nearest_public";
    case Via::unassigned: return "unassigned";
  }
  return "unassigned";
}

std::size_t Market::school_index(SchoolId id) const {
  for (std::size_t j = 0; j < schools.size(); ++j)
    if (schools[j].id == id) return j;
  throw std::invalid_argument("unknown school " + std::to_string(id));
}

void Market::validate() const {
  const std::size_t n = students.size(), m = schools.size();
  std::set<SchoolId> ids;
  for (const auto& s : schools) {
    if (s.capacity < 0) throw std::invalid_argument("school " + std::to_string(s.id) + ": negative capacity");
    if (!ids.insert(s.id).second) throw std::invalid_argument("duplicate school " + std::to_string(s.id));
  }
  if (priority.size() != n || lottery.size() != n)
    throw std::invalid_argument("market: priority/lottery tables do not match the student count");
  for (std::size_t i = 0; i < n; ++i) {
    if (priority[i].size() != m || lottery[i].size() != m)
      throw std::invalid_argument("market: priority/lottery row has the wrong width");
    std::set<SchoolId> seen;
    for (SchoolId id : students[i].rol) {
      if (!ids.count(id))
        throw std::invalid_argument("student " + std::to_string(students[i].id) +
                                    " lists unknown school " + std::to_string(id));
      if (!seen.insert(id).second)
        throw std::invalid_argument("student " + std::to_string(students[i].id) +
                                    " lists school " + std::to_string(id) + " twice");
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = lottery[i][j];
    std::sort(col.begin(), col.end());
    if (std::adjacent_find(col.begin(), col.end()) != col.end())
      throw std::invalid_argument("lottery values tie at school " + std::to_string(schools[j].id));
  }
}

void Market::draw_lottery(std::uint64_t seed) {
  const std::size_t n = students.size(), m = schools.size();
  lottery.assign(n, std::vector<double>(m));
  if (priority.size() != n) priority.assign(n, std::vector<std::uint8_t>(m, 0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      lottery[i][j] = CounterRng({seed, static_cast<std::uint64_t>(students[i].id),
                                  static_cast<std::uint64_t>(schools[j].id), 0x6c6f74ULL})
                          .uniform();
}

void Market::public_candidates_from_locations() {
  for (auto& st : students) {
    st.public_candidates.clear();
    for (const auto& sc : schools) {
      if (!sc.is_public) continue;
      st.public_candidates.push_back({sc.id, std::hypot(st.x - sc.x, st.y - sc.y)});
    }
  }
}

namespace {

// True when student a precedes student b in school j's order.
bool school_prefers(const Market& mk, std::size_t j, std::size_t a, std::size_t b) {
  const auto pa = mk.priority[a][j], pb = mk.priority[b][j];
  if (pa != pb) return pa > pb;
  const double la = mk.lottery[a][j], lb = mk.lottery[b][j];
  if (la != lb) return la < lb;
  return a < b;
}

}  // namespace

Assignment run_da(const Market& market) {
  market.validate();
  const std::size_t n = market.students.size(), m = market.schools.size();
  std::unordered_map<SchoolId, std::size_t> pos;
  for (std::size_t j = 0; j < m; ++j) pos[market.schools[j].id] = j;

  std::vector<std::vector<std::size_t>> rol(n);
  for (std::size_t i = 0; i < n; ++i)
    for (SchoolId id : market.students[i].rol) rol[i].push_back(pos.at(id));

  std::vector<std::size_t> next(n, 0);
  std::vector<std::optional<std::size_t>> held_at(n);
  std::vector<std::vector<std::size_t>> held(m);
  Assignment out;

  for (;;) {
    std::vector<std::vector<std::size_t>> proposals(m);
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (held_at[i] || next[i] >= rol[i].size()) continue;
      proposals[rol[i][next[i]++]].push_back(i);
      any = true;
    }
    if (!any) break;
    ++out.rounds;
    for (std::size_t j = 0; j < m; ++j) {
      if (proposals[j].empty()) continue;
      auto& pool = held[j];
      pool.insert(pool.end(), proposals[j].begin(), proposals[j].end());
      std::sort(pool.begin(), pool.end(),
                [&](std::size_t a, std::size_t b) { return school_prefers(market, j, a, b); });
      const auto cap = static_cast<std::size_t>(market.schools[j].capacity);
      for (std::size_t r = cap; r < pool.size(); ++r) held_at[pool[r]].reset();
      if (pool.size() > cap) pool.resize(cap);
      for (std::size_t i : pool) held_at[i] = j;
      assert(pool.size() <= cap);
    }
  }

  out.match.resize(n);
  out.via.assign(n, Via::unassigned);
  out.rank_position.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!held_at[i]) continue;
    const std::size_t j = *held_at[i];
    out.match[i] = market.schools[j].id;
    out.via[i] = Via::rol;
    const auto it = std::find(rol[i].begin(), rol[i].end(), j);
    out.rank_position[i] = static_cast<int>(it - rol[i].begin()) + 1;
  }
  return out;
}

Assignment fallback_assign(const Assignment& da, const Market& market) {
  const std::size_t n = market.students.size(), m = market.schools.size();
  Assignment out = da;
  std::vector<long> residual(m);
  for (std::size_t j = 0; j < m; ++j) residual[j] = market.schools[j].capacity;
  std::unordered_map<SchoolId, std::size_t> pos;
  for (std::size_t j = 0; j < m; ++j) pos[market.schools[j].id] = j;
  for (std::size_t i = 0; i < n; ++i)
    if (out.via[i] == Via::rol) --residual[pos.at(*out.match[i])];

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return market.students[a].id < market.students[b].id;
  });

  for (std::size_t i : order) {
    if (out.via[i] == Via::rol) continue;
    const MarketStudent& st = market.students[i];
    if (st.guaranteed) {
      out.match[i] = *st.guaranteed;
      out.via[i] = Via::guaranteed;
      continue;
    }
    std::vector<PublicCandidate> cands = st.public_candidates;
    std::stable_sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      return a.distance_km != b.distance_km ? a.distance_km < b.distance_km : a.school < b.school;
    });
    for (const auto& c : cands) {
      if (c.distance_km > kFallbackRadiusKm) break;
      const auto it = pos.find(c.school);
      if (it == pos.end() || residual[it->second] <= 0) continue;
      --residual[it->second];
      out.match[i] = c.school;
      out.via[i] = Via::nearest_public;
      break;
    }
  }
  return out;
}

std::vector<std::string> check_assignment(const Assignment& a, const Market& market) {
  std::vector<std::string> issues;
  const std::size_t n = market.students.size();
  if (a.match.size() != n || a.via.size() != n) {
    issues.push_back("assignment size does not match the market");
    return issues;
  }
  std::map<SchoolId, long> used;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& st = market.students[i];
    switch (a.via[i]) {
      case Via::rol: {
        if (!a.match[i]) {
          issues.push_back("student " + std::to_string(st.id) + ": ROL match without school");
          break;
        }
        if (std::find(st.rol.begin(), st.rol.end(), *a.match[i]) == st.rol.end())
          issues.push_back("student " + std::to_string(st.id) + " matched to an unlisted school");
        ++used[*a.match[i]];
        break;
      }
      case Via::nearest_public: {
        if (!a.match[i]) break;
        ++used[*a.match[i]];
        bool within = false;
        for (const auto& c : st.public_candidates)
          if (c.school == *a.match[i] && c.distance_km <= kFallbackRadiusKm) within = true;
        if (!within)
          issues.push_back("student " + std::to_string(st.id) +
                           " placed at a public school outside the fallback radius");
        break;
      }
      case Via::guaranteed:
        if (!st.guaranteed || !a.match[i] || *st.guaranteed != *a.match[i])
          issues.push_back("student " + std::to_string(st.id) + ": bad guaranteed placement");
        break;
      case Via::unassigned:
        if (a.match[i]) issues.push_back("student " + std::to_string(st.id) + ": unassigned with a school");
        break;
    }
  }
  for (const auto& sc : market.schools) {
    const auto it = used.find(sc.id);
    if (it != used.end() && it->second > sc.capacity)
      issues.push_back("school " + std::to_string(sc.id) + " over capacity (" +
                       std::to_string(it->second) + " > " + std::to_string(sc.capacity) + ")");
  }
  return issues;
}

std::vector<std::pair<std::size_t, std::size_t>> blocking_pairs(const Market& market,
                                                                const Assignment& a) {
  const std::size_t n = market.students.size(), m = market.schools.size();
  std::vector<std::vector<std::size_t>> members(m);
  std::unordered_map<SchoolId, std::size_t> pos;
  for (std::size_t j = 0; j < m; ++j) pos[market.schools[j].id] = j;
  for (std::size_t i = 0; i < n; ++i)
    if (a.via[i] == Via::rol && a.match[i]) members[pos.at(*a.match[i])].push_back(i);

  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rol = market.students[i].rol;
    for (std::size_t r = 0; r < rol.size(); ++r) {
      if (a.via[i] == Via::rol && a.match[i] && rol[r] == *a.match[i]) break;  // worse from here on
      const std::size_t j = pos.at(rol[r]);
      bool blocks = members[j].size() < static_cast<std::size_t>(market.schools[j].capacity);
      for (std::size_t other : members[j])
        if (school_prefers(market, j, i, other)) blocks = true;
      if (blocks) out.emplace_back(i, j);
    }
  }
  return out;
}

double duncan_index(const std::vector<double>& low_counts, const std::vector<double>& high_counts) {
  if (low_counts.size() != high_counts.size())
    throw std::invalid_argument("duncan_index: count vectors differ in length");
  const double nl = std::accumulate(low_counts.begin(), low_counts.end(), 0.0);
  const double nh = std::accumulate(high_counts.begin(), high_counts.end(), 0.0);
  if (nl <= 0.0) throw std::invalid_argument("duncan_index: no assigned low-group students");
  if (nh <= 0.0) throw std::invalid_argument("duncan_index: no assigned high-group students");
  double d = 0.0;
  for (std::size_t j = 0; j < low_counts.size(); ++j)
    d += std::abs(low_counts[j] / nl - high_counts[j] / nh);
  return 0.5 * d;
}

double duncan_index(const Assignment& a, const Market& market) {
  std::map<SchoolId, std::pair<double, double>> counts;
  for (std::size_t i = 0; i < market.students.size(); ++i) {
    if (!a.match[i]) continue;
    auto& c = counts[*a.match[i]];
    (market.students[i].group == Group::low ? c.first : c.second) += 1.0;
  }
  std::vector<double> low, high;
  for (const auto& [id, c] : counts) {
    low.push_back(c.first);
    high.push_back(c.second);
  }
  return duncan_index(low, high);
}

Market with_predicted_rols(const Market& market, const ChoiceDataset& data,
                           const ThresholdParams& params, const PredictMode& mode) {
  params.check(data);
  std::unordered_map<StudentId, const Student*> by_id;
  for (const auto& s : data.students) by_id[s.id] = &s;
  std::set<SchoolId> in_market;
  for (const auto& sc : market.schools) in_market.insert(sc.id);

  Market out = market;
  for (auto& st : out.students) {
    st.rol.clear();
    const auto it = by_id.find(st.id);
    if (it == by_id.end()) continue;  // not in the estimation sample: submits nothing
    const Student& s = *it->second;
    const NetUtilityIndex w = net_utility(s, params.beta, plug_in_cost(s, params));
    for (SchoolId id : predicted_rol(s, w, mode).ranked)
      if (in_market.count(id)) st.rol.push_back(id);
  }
  return out;
}

ChoiceDataset apply_edit(const ChoiceDataset& data, const Market& market, const CovariateEdit& edit) {
  const auto it = std::find(data.pair_covariate_names.begin(), data.pair_covariate_names.end(),
                            edit.covariate);
  if (it == data.pair_covariate_names.end())
    throw std::invalid_argument("counterfactual edit names unknown covariate '" + edit.covariate + "'");
  const auto col = static_cast<Eigen::Index>(it - data.pair_covariate_names.begin());
  std::unordered_map<StudentId, Group> group;
  for (const auto& st : market.students) group[st.id] = st.group;

  ChoiceDataset out = data;
  for (auto& s : out.students) {
    if (edit.only_group) {
      const auto g = group.find(s.id);
      if (g == group.end() || g->second != *edit.only_group) continue;
    }
    s.pair_covariates.col(col).setConstant(edit.value);
  }
  return out;
}

CounterfactualResult counterfactual_run(const ChoiceDataset& data, const ThresholdParams& params,
                                        const CovariateEdit& edit, const Market& market_template,
                                        const PredictMode& mode) {
  const ChoiceDataset edited = apply_edit(data, market_template, edit);
  CounterfactualResult r;
  const Market base = with_predicted_rols(market_template, data, params, mode);
  const Market cf = with_predicted_rols(market_template, edited, params, mode);
  r.baseline_assignment = fallback_assign(run_da(base), base);
  r.counterfactual_assignment = fallback_assign(run_da(cf), cf);
  r.baseline = duncan_index(r.baseline_assignment, base);
  r.counterfactual = duncan_index(r.counterfactual_assignment, cf);
  return r;
}

}  // namespace trom
