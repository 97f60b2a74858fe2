#include "trom/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <quadmath.h>

namespace trom {

namespace {

template <class T>
struct Math;

template <>
struct Math<long double> {
  static long double exp(long double x) { return std::exp(x); }
  static long double expm1(long double x) { return std::expm1(x); }
  static long double log(long double x) { return std::log(x); }
};

template <>
struct Math<__float128> {
  static __float128 exp(__float128 x) { return expq(x); }
  static __float128 expm1(__float128 x) { return expm1q(x); }
  static __float128 log(__float128 x) { return logq(x); }
};

// Neumaier compensated accumulator.
template <class T>
struct CompensatedSum {
  T sum = 0, comp = 0;
  void add(T x) {
    const T t = sum + x;
    const T as = sum < 0 ? -sum : sum;
    const T ax = x < 0 ? -x : x;
    if (as >= ax)
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  T value() const { return sum + comp; }
};

constexpr double kMemoSlack = 1e-12;
// Leave the long double recursion once the accumulated cancellation would
// cost more than ~10 of its 19 significant digits.
constexpr double kCancellationLimit = 1e9;

void check_finite(std::span<const double> w, const char* who) {
  for (double x : w)
    if (!std::isfinite(x)) throw std::domain_error(std::string(who) + ": non-finite utility");
}

// Clamps a sub-problem probability to [0,1]; `bad` is raised when it left
// [-1e-12, 1 + 1e-12].
template <class T>
T clamp_memo(T v, bool& bad) {
  if (!(v >= T(-kMemoSlack) && v <= T(1 + kMemoSlack))) bad = true;
  if (!(v >= 0)) return 0;
  if (v > 1) return 1;
  return v;
}

template <class T>
T checked_memo(T v) {
  bool bad = false;
  const T out = clamp_memo(v, bad);
  if (bad)
    throw std::logic_error("threshold recursion left [0,1]: sub-problem probability " +
                           std::to_string(static_cast<double>(v)));
  return out;
}

// P(tau_1 + ... + tau_k <= 1) for independent tau_m ~ Exp(rates[m]), rates
// decreasing, by uniformization at rate rates[0]: every term is positive, so
// the sum is free of cancellation. `before[m]` = rates[0] - rates[m], given
// separately so stay probabilities are formed without subtraction.
template <class T>
T hypoexponential_cdf(const T* rates, const T* before, std::size_t k, std::vector<T>& pi) {
  using std::exp;
  const T lam = rates[0];
  // pi[0..k-1] transient stage probabilities, then advance and stay ratios.
  pi.assign(3 * k, T(0));
  T* adv = pi.data() + k;
  T* stay = pi.data() + 2 * k;
  for (std::size_t m = 0; m < k; ++m) {
    adv[m] = rates[m] / lam;
    stay[m] = before[m] / lam;
  }
  pi[0] = 1;
  T absorbed = 0;
  T pois = exp(-lam);
  T acc = 0;
  for (std::size_t n = 1; n < 200000; ++n) {
    absorbed += pi[k - 1] * adv[k - 1];
    pi[k - 1] *= stay[k - 1];
    for (std::size_t m = k - 1; m-- > 0;) {
      pi[m + 1] += pi[m] * adv[m];
      pi[m] *= stay[m];
    }
    pois *= lam / T(n);
    acc += pois * absorbed;
    if (n >= k && T(n + 2) > lam) {
      const T tail = pois * lam / T(n + 1) / (1 - lam / T(n + 2));
      if (tail <= T(1e-18) * acc || pois == 0) return acc;
    }
  }
  throw std::logic_error("hypoexponential series did not converge");
}

// Largest first-stage rate handled by the race form (exp(-rate) stays normal).
constexpr double kRaceRateLimit = 700.0;

// Bottom-up evaluation of I(1..K). Returns I(K); `cancellation` receives the
// ratio between the largest term magnitude seen and the final value.
template <class T>
T threshold_recursion(std::span<const double> w, std::vector<T>& ew, std::vector<T>& f,
                      std::vector<T>& e, std::vector<T>& memo, std::vector<T>& prefix,
                      double& cancellation) {
  using M = Math<T>;
  const std::size_t k = w.size();
  ew.resize(k);
  f.resize(k);
  e.resize(k);
  memo.resize(k);
  prefix.resize(k + 1);

  const double wmax = *std::max_element(w.begin(), w.end());
  prefix[0] = 0;
  for (std::size_t j = 0; j < k; ++j) {
    ew[j] = M::exp(T(w[j]));
    f[j] = M::exp(-ew[j]);
    e[j] = M::exp(T(w[j]) - T(wmax));
    prefix[j + 1] = prefix[j] + ew[j];
  }

  T largest = 0;
  bool bad = false;
  memo[0] = clamp_memo<T>(-M::expm1(-ew[0]), bad);
  largest = memo[0];
  for (std::size_t n = 2; n <= k; ++n) {
    CompensatedSum<T> acc;
    T stage_sum = e[n - 1];
    T pl = 1;
    T phi = f[n - 1];
    for (std::size_t a = n - 1; a >= 1; --a) {
      // pl = PL(a..n-1), phi = prod_{j=a}^{n-1} F_j; items 0..a-1 sit above zero.
      const T term = pl * phi * memo[a - 1];
      largest = std::max(largest, term);
      acc.add(-term);
      stage_sum += e[a - 1];
      T kappa;
      if (stage_sum > 0) {
        kappa = e[a - 1] / stage_sum;
      } else {
        // Every shifted exponential underflowed; rebuild the stage in log space.
        T lse = T(w[a - 1]);
        for (std::size_t i = a; i < n; ++i) {
          const T hi = std::max(lse, T(w[i]));
          const T lo = std::min(lse, T(w[i]));
          lse = hi + M::log(1 + M::exp(lo - hi));
        }
        kappa = M::exp(T(w[a - 1]) - lse);
      }
      pl *= kappa;
      phi *= f[a - 1];
    }
    const T top = pl * (-M::expm1(-prefix[n]));
    largest = std::max(largest, top);
    acc.add(top);
    memo[n - 1] = clamp_memo<T>(acc.value(), bad);
  }
  const T result = memo[k - 1];
  cancellation = result > 0 && !bad
                     ? static_cast<double>(largest / result) * static_cast<double>(k)
                     : std::numeric_limits<double>::infinity();
  return result;
}

// I(K) = PL(1..K) P(tau_1 + ... + tau_K <= 1), tau_m ~ Exp(sum_{j>=m} exp(w_j)):
// with T_j = exp(-U_j) exponential at rate exp(w_j), the ordered event is the
// race T_1 < ... < T_K < 1. Returns log I(K).
long double log_race_prob(std::span<const double> w, RecursionWorkspace& ws) {
  const std::size_t k = w.size();
  auto& rates = ws.ew;
  auto& before = ws.f;
  rates.resize(k);
  before.resize(k);
  long double tail = 0;
  for (std::size_t m = k; m-- > 0;) {
    tail += std::exp(static_cast<long double>(w[m]));
    rates[m] = tail;
  }
  long double head = 0;
  for (std::size_t m = 0; m < k; ++m) {
    before[m] = head;
    head += std::exp(static_cast<long double>(w[m]));
  }
  long double log_pl = 0;
  long double lse = w[k - 1];
  for (std::size_t m = k - 1; m-- > 0;) {
    const long double wm = w[m];
    const long double hi = std::max(lse, wm), lo = std::min(lse, wm);
    lse = hi + std::log1p(std::exp(lo - hi));
    log_pl += wm - lse;
  }
  const long double h = hypoexponential_cdf(rates.data(), before.data(), k, ws.memo);
  return log_pl + std::log(h);
}

// log I(K) with extended precision, switching to the race form once the
// recursion loses too many digits.
long double log_threshold_prob_ld(std::span<const double> w, RecursionWorkspace& ws) {
  double cancellation = 0.0;
  const long double v =
      threshold_recursion<long double>(w, ws.ew, ws.f, ws.e, ws.memo, ws.prefix, cancellation);
  if (cancellation <= kCancellationLimit) return v > 0 ? std::log(v) : -HUGE_VALL;
  const double sum_rate = [&] {
    long double t = 0;
    for (double x : w) t += std::exp(static_cast<long double>(x));
    return static_cast<double>(t);
  }();
  if (sum_rate <= kRaceRateLimit) return log_race_prob(w, ws);
  std::vector<__float128> ew, f, e, memo, prefix;
  const __float128 q = threshold_recursion<__float128>(w, ew, f, e, memo, prefix, cancellation);
  checked_memo(q);
  return q > 0 ? std::log(static_cast<long double>(q)) : -HUGE_VALL;
}

long double threshold_prob_ld(std::span<const double> w, RecursionWorkspace& ws) {
  return std::exp(log_threshold_prob_ld(w, ws));
}

double log_sum_exp2(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

std::vector<std::size_t> complement(std::size_t j, std::span<const std::size_t> ranked,
                                    const char* who) {
  std::vector<char> used(j, 0);
  for (std::size_t r : ranked) {
    if (r >= j) throw std::invalid_argument(std::string(who) + ": ranked index out of range");
    if (used[r]) throw std::invalid_argument(std::string(who) + ": duplicate school in ROL");
    used[r] = 1;
  }
  std::vector<std::size_t> out;
  out.reserve(j - ranked.size());
  for (std::size_t i = 0; i < j; ++i)
    if (!used[i]) out.push_back(i);
  return out;
}

}  // namespace

double log_ordered_threshold_prob(std::span<const double> w_ranked, RecursionWorkspace& ws) {
  if (w_ranked.empty())
    throw std::invalid_argument("ordered_threshold_prob: empty ranked block");
  check_finite(w_ranked, "ordered_threshold_prob");
  return static_cast<double>(log_threshold_prob_ld(w_ranked, ws));
}

double log_ordered_threshold_prob(std::span<const double> w_ranked) {
  RecursionWorkspace ws;
  return log_ordered_threshold_prob(w_ranked, ws);
}

double ordered_threshold_prob(std::span<const double> w_ranked) {
  if (w_ranked.empty())
    throw std::invalid_argument("ordered_threshold_prob: empty ranked block");
  check_finite(w_ranked, "ordered_threshold_prob");
  RecursionWorkspace ws;
  return static_cast<double>(threshold_prob_ld(w_ranked, ws));
}

double log_ordered_threshold_prob_race(std::span<const double> w_ranked) {
  if (w_ranked.empty())
    throw std::invalid_argument("ordered_threshold_prob: empty ranked block");
  check_finite(w_ranked, "ordered_threshold_prob");
  long double total = 0;
  for (double x : w_ranked) total += std::exp(static_cast<long double>(x));
  if (!(total <= kRaceRateLimit))
    throw std::domain_error("race form needs sum exp(w) <= 700");
  RecursionWorkspace ws;
  return static_cast<double>(log_race_prob(w_ranked, ws));
}

OrderedProbTerms ordered_threshold_terms(std::span<const double> w_ranked) {
  if (w_ranked.empty())
    throw std::invalid_argument("ordered_threshold_prob: empty ranked block");
  check_finite(w_ranked, "ordered_threshold_prob");
  RecursionWorkspace ws;
  double cancellation = 0.0;
  threshold_recursion<long double>(w_ranked, ws.ew, ws.f, ws.e, ws.memo, ws.prefix,
                                   cancellation);
  OrderedProbTerms out;
  const std::size_t k = w_ranked.size();
  out.memo.assign(ws.memo.begin(), ws.memo.end());
  out.f_neg.assign(ws.f.begin(), ws.f.end());
  out.kappa.resize(k);
  for (std::size_t m = 0; m < k; ++m) {
    long double s = 0;
    for (std::size_t j = m; j < k; ++j) s += std::exp(-(static_cast<long double>(w_ranked[m]) -
                                                       static_cast<long double>(w_ranked[j])));
    out.kappa[m] = static_cast<double>(1.0L / s);
  }
  return out;
}

double log_rol_likelihood_unchecked(std::span<const double> w,
                                    std::span<const std::size_t> ranked,
                                    std::span<const std::size_t> unranked,
                                    RecursionWorkspace& ws) {
  double below = 0.0;
  for (std::size_t l : unranked) below -= std::exp(w[l]);
  if (ranked.empty()) return below;
  double buf[64];
  std::vector<double> heap;
  double* wr = buf;
  if (ranked.size() > 64) {
    heap.resize(ranked.size());
    wr = heap.data();
  }
  for (std::size_t m = 0; m < ranked.size(); ++m) wr[m] = w[ranked[m]];
  return static_cast<double>(log_threshold_prob_ld({wr, ranked.size()}, ws)) + below;
}

namespace {
// Double-precision evaluation is accepted while cancellation costs fewer than
// ~4 of its 16 digits.
constexpr double kFastCancellationLimit = 1e4;
constexpr double kFastRange = 600.0;
}  // namespace

void ShiftedRolEvaluator::reset(std::span<const double> a, std::span<const std::size_t> ranked,
                                std::span<const std::size_t> unranked) {
  a_.assign(a.begin(), a.end());
  ranked_.assign(ranked.begin(), ranked.end());
  unranked_.assign(unranked.begin(), unranked.end());
  k_ = ranked.size();
  amax_ = a_.empty() ? 0.0 : *std::max_element(a_.begin(), a_.end());
  tail_ = 0.0;
  for (std::size_t l : unranked_) tail_ += std::exp(a_[l] - amax_);
  e_.resize(k_);
  fast_ = std::isfinite(amax_);
  for (std::size_t m = 0; m < k_; ++m) {
    e_[m] = std::exp(a_[ranked_[m]] - amax_);
    if (!(e_[m] > 0.0)) fast_ = false;  // stage terms would need log space
  }
  pl_.assign(k_ * k_, 0.0);
  if (!fast_) return;
  for (std::size_t n = 1; n <= k_; ++n) {
    double stage_sum = e_[n - 1];
    double pl = 1.0;
    pl_[(n - 1) * k_ + n - 1] = 1.0;
    for (std::size_t a = n - 1; a >= 1; --a) {
      stage_sum += e_[a - 1];
      pl *= e_[a - 1] / stage_sum;
      pl_[(a - 1) * k_ + n - 1] = pl;
    }
  }
  ew_.resize(k_);
  f_.resize(k_);
  memo_.resize(k_);
  rate_.resize(k_);
  adv_.resize(k_);
  stay_.resize(k_);
  double tail = 0.0, head = 0.0;
  for (std::size_t m = k_; m-- > 0;) {
    tail += e_[m];
    rate_[m] = tail;
  }
  for (std::size_t m = 0; m < k_; ++m) {
    adv_[m] = rate_[m] / rate_[0];
    stay_[m] = head / rate_[0];
    head += e_[m];
  }
  log_pl_ = k_ ? std::log(pl_[k_ - 1]) : 0.0;
  if (!std::isfinite(log_pl_)) fast_ = false;
}

double ShiftedRolEvaluator::generic(double d) {
  w_.resize(a_.size());
  for (std::size_t j = 0; j < a_.size(); ++j) w_[j] = a_[j] - d;
  return log_rol_likelihood_unchecked(w_, ranked_, unranked_, ws_);
}

// Double-precision recursion; false (with the shift queued) if it cancels.
bool ShiftedRolEvaluator::fast(double d, double& out) {
  const double x = amax_ - d;
  if (!fast_ || !(std::abs(x) <= kFastRange)) {
    out = generic(d);
    return true;
  }
  const double s = std::exp(x);
  const double below = -s * tail_;
  if (k_ == 0) {
    out = below;
    return true;
  }
  for (std::size_t m = 0; m < k_; ++m) {
    ew_[m] = e_[m] * s;
    f_[m] = std::exp(-ew_[m]);
  }
  memo_[0] = -std::expm1(-ew_[0]);
  double prefix = ew_[0];
  double largest = memo_[0];
  bool ok = true;
  for (std::size_t n = 2; n <= k_ && ok; ++n) {
    prefix += ew_[n - 1];
    double acc = 0.0;
    double phi = f_[n - 1];
    for (std::size_t a = n - 1; a >= 1; --a) {
      const double term = pl_[a * k_ + n - 1] * phi * memo_[a - 1];
      largest = std::max(largest, term);
      acc -= term;
      phi *= f_[a - 1];
    }
    const double top = pl_[n - 1] * -std::expm1(-prefix);
    largest = std::max(largest, top);
    acc += top;
    ok = acc >= -kMemoSlack && acc <= 1 + kMemoSlack;
    memo_[n - 1] = std::clamp(acc, 0.0, 1.0);
  }
  const double v = memo_[k_ - 1];
  if (ok && v > 0.0 && largest / v * static_cast<double>(k_) <= kFastCancellationLimit) {
    out = std::log(v) + below;
    return true;
  }
  pending_.push_back({s, below, d, 0});
  return false;
}

// Moves the race state forward by mu units of the first-stage rate:
// uniformization over the transient stages pi_ plus the absorbed mass. Mass
// only moves downstream, so the series tail left in stage m is bounded by the
// Poisson tail times the mass upstream of m.
void ShiftedRolEvaluator::advance(double mu) {
  const std::size_t k = k_;
  x_.assign(pi_.begin(), pi_.end());
  upstream_.resize(k);
  double mass = 0.0;
  for (std::size_t m = 0; m < k; ++m) upstream_[m] = mass += pi_[m];
  double pois = std::exp(-mu);
  for (std::size_t m = 0; m < k; ++m) acc_[m] = pois * x_[m];
  double chain = 0.0;  // mass absorbed along the uniformized chain so far
  double gained = 0.0;
  constexpr double kTol = 1e-17;
  for (std::size_t n = 1;; ++n) {
    chain += x_[k - 1] * adv_[k - 1];
    x_[k - 1] *= stay_[k - 1];
    for (std::size_t m = k - 1; m-- > 0;) {
      x_[m + 1] += x_[m] * adv_[m];
      x_[m] *= stay_[m];
    }
    pois *= mu / static_cast<double>(n);
    for (std::size_t m = 0; m < k; ++m) acc_[m] += pois * x_[m];
    gained += pois * chain;
    if (pois == 0.0) break;
    if (static_cast<double>(n + 2) > mu) {
      const double tail =
          pois * mu / static_cast<double>(n + 1) / (1 - mu / static_cast<double>(n + 2));
      bool done = tail * mass <= kTol * (absorbed_ + gained);
      for (std::size_t m = 0; m < k && done; ++m)
        done = tail * upstream_[m] <= kTol * acc_[m] || (upstream_[m] < 1e-290 && n >= k);
      if (done) break;
    }
    if (n == 200000) throw std::logic_error("hypoexponential series did not converge");
  }
  pi_.assign(acc_.begin(), acc_.begin() + static_cast<std::ptrdiff_t>(k));
  absorbed_ += gained;
}

// Serves the queued shifts in increasing time scale: the absorbed mass of the
// race at time s is P(tau_1 + ... + tau_K <= s) at unit rates.
void ShiftedRolEvaluator::sweep(std::span<double> out) {
  std::sort(pending_.begin(), pending_.end(),
            [](const Pending& x, const Pending& y) { return x.s < y.s; });
  pi_.assign(k_, 0.0);
  pi_[0] = 1.0;
  x_.resize(k_);
  acc_.resize(k_);
  absorbed_ = 0.0;
  double now = 0.0;
  for (const Pending& p : pending_) {
    if (!(p.s * rate_[0] <= kRaceRateLimit)) {
      out[p.slot] = generic(p.d);
      continue;
    }
    if (p.s > now) {
      advance(rate_[0] * (p.s - now));
      now = p.s;
    }
    out[p.slot] = absorbed_ > 0.0 ? log_pl_ + std::log(absorbed_) + p.below : generic(p.d);
  }
  pending_.clear();
}

double ShiftedRolEvaluator::log_prob(double d) {
  double out = 0.0;
  log_probs({&d, 1}, {&out, 1});
  return out;
}

void ShiftedRolEvaluator::log_probs(std::span<const double> d, std::span<double> out) {
  pending_.clear();
  for (std::size_t t = 0; t < d.size(); ++t) {
    const double dt = d[t];
    if (!fast(dt, out[t])) pending_.back().slot = t;
  }
  if (!pending_.empty()) sweep(out);
}

double log_rol_likelihood(std::span<const double> w, std::span<const std::size_t> ranked) {
  check_finite(w, "rol_likelihood");
  const auto unranked = complement(w.size(), ranked, "rol_likelihood");
  RecursionWorkspace ws;
  return log_rol_likelihood_unchecked(w, ranked, unranked, ws);
}

double rol_likelihood(std::span<const double> w, std::span<const std::size_t> ranked) {
  return std::exp(log_rol_likelihood(w, ranked));
}

double log_rol_likelihood(const NetUtilityIndex& w, const Student& student) {
  if (w.size() != student.choice_set_size())
    throw std::invalid_argument("rol_likelihood: utility index does not match the choice set");
  return log_rol_likelihood(std::span<const double>(w.w), student.ranked_index);
}

double rol_likelihood(const NetUtilityIndex& w, const Student& student) {
  return std::exp(log_rol_likelihood(w, student));
}

double log_pl_likelihood(std::span<const double> w, std::span<const std::size_t> full_order) {
  check_finite(w, "pl_likelihood");
  if (full_order.size() != w.size())
    throw std::invalid_argument("pl_likelihood: order is not a complete permutation");
  complement(w.size(), full_order, "pl_likelihood");
  double lse = -std::numeric_limits<double>::infinity();
  double out = 0.0;
  for (std::size_t m = full_order.size(); m-- > 0;) {
    const double wm = w[full_order[m]];
    lse = log_sum_exp2(lse, wm);
    out += wm - lse;
  }
  return out;
}

double pl_likelihood(std::span<const double> w, std::span<const std::size_t> full_order) {
  return std::exp(log_pl_likelihood(w, full_order));
}

double log_partial_urn_likelihood(std::span<const double> w,
                                  std::span<const std::size_t> ranked) {
  check_finite(w, "partial_urn_likelihood");
  const auto unranked = complement(w.size(), ranked, "partial_urn_likelihood");
  double lse = -std::numeric_limits<double>::infinity();
  for (std::size_t l : unranked) lse = log_sum_exp2(lse, w[l]);
  double out = 0.0;
  for (std::size_t m = ranked.size(); m-- > 0;) {
    const double wm = w[ranked[m]];
    lse = log_sum_exp2(lse, wm);
    out += wm - lse;
  }
  return out;
}

double partial_urn_likelihood(std::span<const double> w, std::span<const std::size_t> ranked) {
  return std::exp(log_partial_urn_likelihood(w, ranked));
}

double pairwise_rank_prob(double w_high, double w_low) {
  if (!std::isfinite(w_high) || !std::isfinite(w_low))
    throw std::domain_error("pairwise_rank_prob: non-finite utility");
  const long double eh = std::exp(static_cast<long double>(w_high));
  const long double el = std::exp(static_cast<long double>(w_low));
  const long double kappa =
      1.0L / (1.0L + std::exp(static_cast<long double>(w_low) - static_cast<long double>(w_high)));
  const long double f_low = std::exp(-el);
  const long double not_both_below = -std::expm1(-(eh + el));  // 1 - F_h F_l
  const long double high_above = -std::expm1(-eh);                // 1 - F_h
  const long double v = kappa * not_both_below - f_low * high_above;
  return static_cast<double>(std::clamp(v, 0.0L, 1.0L));
}

}  // namespace trom
