#pragma once

// Affordance discovery from correlated per-primitive changes, refinement by
// adding context dimensions, and planning over nested affordances.

#include <Eigen/Dense>
#include <algorithm>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"
#include "memory.hpp"
#include "models.hpp"

namespace sgim {

struct LinearFit {
  Eigen::MatrixXd weights;  ///< q x p
  Eigen::VectorXd bias;     ///< q
  double r2 = 0.0;
  std::size_t samples = 0;
};

/// Least-squares fit y = W x + b (column-pivoting QR). R^2 sums residual
/// and total squares over all output dimensions; zero output variance gives
/// R^2 = 0.
inline LinearFit fit_linear(const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
  if (xs.size() != ys.size() || xs.empty()) throw Error("fit_linear: need matching nonempty samples");
  const auto n = static_cast<Eigen::Index>(xs.size());
  const auto p = static_cast<Eigen::Index>(xs.front().size());
  const auto q = static_cast<Eigen::Index>(ys.front().size());
  Eigen::MatrixXd X(n, p + 1), Y(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    X(i, p) = 1.0;
    for (Eigen::Index j = 0; j < q; ++j) Y(i, j) = ys[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::MatrixXd B = X.colPivHouseholderQr().solve(Y);  // (p+1) x q
  LinearFit f;
  f.weights = B.topRows(p).transpose();
  f.bias = B.row(p).transpose();
  f.samples = xs.size();
  const Eigen::MatrixXd resid = Y - X * B;
  const Eigen::RowVectorXd mean = Y.colwise().mean();
  const double ss_res = resid.squaredNorm();
  const double ss_tot = (Y.rowwise() - mean).squaredNorm();
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  return f;
}

/// One executed primitive with its surroundings.
struct Transition {
  Vec context;
  Vec primitive;
  OutcomeSet before;
  OutcomeSet after;
  std::size_t episode = 0;

  std::optional<Vec> delta(SpaceId s) const {
    const auto i = static_cast<std::size_t>(s.value);
    if (i >= before.size() || !before[i] || !after[i]) return std::nullopt;
    Vec d(before[i]->size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = (*after[i])[k] - (*before[i])[k];
    return d;
  }
};

struct AffordanceParams {
  double r2_threshold = 0.7;
  std::size_t min_samples = 20;
  std::size_t window = 200;
  std::size_t candidates = 3;
  double contradiction_factor = 3.0;
  double min_improvement = 0.10;
  std::size_t min_errors = 10;
  double plan_tolerance = 0.05;
  int plan_max_steps = 20;
};

enum class AffordanceStatus { Candidate, Active };

/// Emergent task model C_i -> Omega_j over per-primitive changes, with a
/// k-NN forward model on (delta input, selected context dims).
struct Affordance {
  struct Sample {
    Vec x, ctx, y;
  };

  int id = 0;
  ControllableSpace input;
  SpaceId output;
  std::vector<std::size_t> context_dims;
  std::size_t created = 0;
  double r2 = 0.0;
  AffordanceStatus status = AffordanceStatus::Active;
  std::vector<Sample> samples;
  std::deque<double> errors;

  std::size_t window_begin(std::size_t window) const { return samples.size() > window ? samples.size() - window : 0; }

  // Per-feature 1/std over the window; constant features get weight 0.
  Vec scales(bool inverse, const std::vector<std::size_t>& dims, std::size_t window) const {
    const std::size_t b = window_begin(window);
    const std::size_t n = samples.size() - b;
    const std::size_t head = inverse ? samples.front().y.size() : samples.front().x.size();
    Vec sc(head + dims.size(), 0.0);
    for (std::size_t f = 0; f < sc.size(); ++f) {
      double m = 0.0, m2 = 0.0;
      for (std::size_t i = b; i < samples.size(); ++i) {
        const double v = feature(samples[i], inverse, dims, f);
        m += v;
        m2 += v * v;
      }
      m /= static_cast<double>(n);
      const double var = std::max(0.0, m2 / static_cast<double>(n) - m * m);
      sc[f] = var > 1e-18 ? 1.0 / std::sqrt(var) : 0.0;
    }
    return sc;
  }

  static double feature(const Sample& s, bool inverse, const std::vector<std::size_t>& dims, std::size_t f) {
    const Vec& head = inverse ? s.y : s.x;
    if (f < head.size()) return head[f];
    return s.ctx[dims[f - head.size()]];
  }

  static Vec features(const Vec& head, const Vec& ctx, const std::vector<std::size_t>& dims) {
    Vec v = head;
    for (auto d : dims) v.push_back(ctx[d]);
    return v;
  }

  /// k=3 weighted prediction of the output change.
  std::optional<Vec> forward(const Vec& x, const Vec& ctx, std::size_t window = 200) const {
    return knn_predict(x, ctx, context_dims, window, std::nullopt);
  }

  std::optional<Vec> knn_predict(const Vec& x, const Vec& ctx, const std::vector<std::size_t>& dims, std::size_t window,
                                 std::optional<std::size_t> skip) const {
    if (samples.empty()) return std::nullopt;
    return knn_predict(x, ctx, dims, scales(false, dims, window), skip);
  }

  std::optional<Vec> knn_predict(const Vec& x, const Vec& ctx, const std::vector<std::size_t>& dims, const Vec& sc,
                                 std::optional<std::size_t> skip) const {
    const auto q = features(x, ctx, dims);
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (skip && *skip == i) continue;
      double acc = 0.0;
      for (std::size_t f = 0; f < q.size(); ++f) {
        const double t = (feature(samples[i], false, dims, f) - q[f]) * sc[f];
        acc += t * t;
      }
      d.emplace_back(acc, i);
    }
    if (d.empty()) return std::nullopt;
    const std::size_t k = std::min<std::size_t>(3, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    if (d.front().first == 0.0) return samples[d.front().second].y;
    Vec y(samples.front().y.size(), 0.0);
    double wsum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double w = 1.0 / (std::sqrt(d[j].first) + 1e-6);
      wsum += w;
      for (std::size_t m = 0; m < y.size(); ++m) y[m] += w * samples[d[j].second].y[m];
    }
    for (double& v : y) v /= wsum;
    return y;
  }

  /// Input change of the sample whose (output change, context) is nearest.
  std::optional<Vec> inverse(const Vec& dy, const Vec& ctx, std::size_t window = 200) const {
    if (samples.empty()) return std::nullopt;
    const auto sc = scales(true, context_dims, window);
    const auto q = features(dy, ctx, context_dims);
    std::optional<std::size_t> best;
    double best_d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      double acc = 0.0;
      for (std::size_t f = 0; f < q.size(); ++f) {
        const double t = (feature(samples[i], true, context_dims, f) - q[f]) * sc[f];
        acc += t * t;
      }
      if (!best || acc < best_d) {
        best = i;
        best_d = acc;
      }
    }
    return samples[*best].x;
  }

  /// Mean leave-one-out prediction error over the window.
  double loo_error(const std::vector<std::size_t>& dims, std::size_t window) const {
    const std::size_t b = window_begin(window);
    if (samples.size() - b < 2) return 0.0;
    double total = 0.0;
    // neighbours are searched within the window only
    Affordance w;
    w.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(b), samples.end());
    const auto sc = w.scales(false, dims, window);
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      const auto p = w.knn_predict(w.samples[i].x, w.samples[i].ctx, dims, sc, i);
      total += distance(*p, w.samples[i].y);
    }
    return total / static_cast<double>(w.samples.size());
  }

  double median_error() const {
    if (errors.empty()) return 0.0;
    std::vector<double> e(errors.begin(), errors.end());
    std::nth_element(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(e.size() / 2), e.end());
    return e[e.size() / 2];
  }
};

struct RefineOutcome {
  bool contradiction = false;
  std::optional<std::size_t> added_dim;
  double base_error = 0.0;
  double best_error = 0.0;
};

/// Adds one sample; when its prediction error exceeds the contradiction
/// factor times the running median, tries each unused context dimension and
/// keeps the one with the lowest leave-one-out error if it improves by the
/// minimum fraction.
inline constexpr double kNegligibleError = 1e-9;

inline RefineOutcome refine(Affordance& a, Affordance::Sample s, const AffordanceParams& p) {
  RefineOutcome out;
  std::optional<double> err;
  if (a.samples.size() >= 3)
    if (auto pred = a.forward(s.x, s.ctx, p.window)) err = distance(*pred, s.y);
  const std::size_t ctx_dim = s.ctx.size();
  a.samples.push_back(std::move(s));
  if (!err) return out;
  const double med = a.median_error();
  const bool enough = a.errors.size() >= p.min_errors;
  a.errors.push_back(*err);
  while (a.errors.size() > p.window) a.errors.pop_front();
  if (!enough || *err <= kNegligibleError || !(*err > p.contradiction_factor * med)) return out;
  out.contradiction = true;
  out.base_error = a.loo_error(a.context_dims, p.window);
  out.best_error = out.base_error;
  std::optional<std::size_t> best;
  for (std::size_t d = 0; d < ctx_dim; ++d) {
    if (std::find(a.context_dims.begin(), a.context_dims.end(), d) != a.context_dims.end()) continue;
    auto dims = a.context_dims;
    dims.push_back(d);
    const double e = a.loo_error(dims, p.window);
    if (e < out.best_error) {
      out.best_error = e;
      best = d;
    }
  }
  if (best && out.base_error - out.best_error >= p.min_improvement * out.base_error) {
    a.context_dims.push_back(*best);
    out.added_dim = best;
  }
  // the next search waits for min_errors fresh predictions
  a.errors.clear();
  return out;
}

struct DetectResult {
  std::optional<Affordance> created;
  std::vector<std::pair<std::pair<SpaceId, SpaceId>, double>> tested;  ///< ((input, output), R^2)
};

/// Training pairs for a candidate (input, output) over the newest `window`
/// transitions in which the output (and an outcome input) changed.
inline void candidate_data(const std::deque<Transition>& buffer, SpaceId input, SpaceId output, std::size_t window,
                           std::vector<Vec>& xs, std::vector<Vec>& ys, std::vector<Vec>* ctxs = nullptr) {
  xs.clear();
  ys.clear();
  if (ctxs) ctxs->clear();
  for (auto it = buffer.rbegin(); it != buffer.rend() && xs.size() < window; ++it) {
    const auto dy = it->delta(output);
    if (!dy || norm(*dy) == 0.0) continue;
    Vec x;
    if (input == kActionNode) {
      x = it->primitive;
    } else {
      const auto dx = it->delta(input);
      if (!dx || norm(*dx) == 0.0) continue;
      x = *dx;
    }
    xs.push_back(std::move(x));
    ys.push_back(*dy);
    if (ctxs) ctxs->push_back(it->context);
  }
  std::reverse(xs.begin(), xs.end());
  std::reverse(ys.begin(), ys.end());
  if (ctxs) std::reverse(ctxs->begin(), ctxs->end());
}

/// Discovery state for one run: the transition buffer, the affordances and
/// the controllable set.
class AffordanceRegistry {
 public:
  AffordanceRegistry() = default;
  AffordanceRegistry(std::vector<OutcomeSpace> spaces, std::size_t action_dim, AffordanceParams params = {})
      : spaces_(std::move(spaces)), action_dim_(action_dim), params_(params) {}

  const AffordanceParams& params() const { return params_; }
  const std::vector<Affordance>& affordances() const { return affordances_; }
  std::vector<Affordance>& affordances() { return affordances_; }
  const std::set<SpaceId>& controllable() const { return controllable_; }
  bool is_controllable(SpaceId s) const { return controllable_.count(s) != 0; }
  const std::deque<Transition>& buffer() const { return buffer_; }

  const Affordance* for_output(SpaceId s) const {
    for (const auto& a : affordances_)
      if (a.output == s && a.status == AffordanceStatus::Active) return &a;
    return nullptr;
  }

  void add_transition(Transition t) {
    buffer_.push_back(std::move(t));
    while (buffer_.size() > kBufferLimit) buffer_.pop_front();
  }

  /// Candidate (input, output) pairs: inputs from {A} and the controllable
  /// spaces, outputs not yet controllable.
  std::vector<std::pair<SpaceId, SpaceId>> candidate_pairs() const {
    std::vector<SpaceId> inputs{kActionNode};
    inputs.insert(inputs.end(), controllable_.begin(), controllable_.end());
    std::vector<std::pair<SpaceId, SpaceId>> out;
    for (auto in : inputs)
      for (const auto& sp : spaces_)
        if (!controllable_.count(sp.id) && sp.id != in) out.emplace_back(in, sp.id);
    return out;
  }

  /// Tests up to `candidates` random pairs; the best passing fit becomes an
  /// active affordance.
  DetectResult detect(std::size_t episode, Rng& rng) {
    DetectResult res;
    auto pairs = candidate_pairs();
    std::shuffle(pairs.begin(), pairs.end(), rng);
    if (pairs.size() > params_.candidates) pairs.resize(params_.candidates);
    std::optional<std::pair<SpaceId, SpaceId>> best;
    double best_r2 = -1.0;
    std::vector<Vec> xs, ys;
    for (const auto& pr : pairs) {
      candidate_data(buffer_, pr.first, pr.second, params_.window, xs, ys);
      if (xs.size() < params_.min_samples) continue;
      const double r2 = fit_linear(xs, ys).r2;
      res.tested.push_back({pr, r2});
      if (r2 >= params_.r2_threshold && r2 > best_r2) {
        best_r2 = r2;
        best = pr;
      }
    }
    if (best) res.created = create(best->first, best->second, episode, best_r2);
    return res;
  }

  Affordance create(SpaceId input, SpaceId output, std::size_t episode, double r2) {
    Affordance a;
    a.id = static_cast<int>(affordances_.size());
    a.input = {input, input == kActionNode ? action_dim_ : spaces_.at(static_cast<std::size_t>(input.value)).dim()};
    a.output = output;
    a.created = episode;
    a.r2 = r2;
    a.status = AffordanceStatus::Active;
    std::vector<Vec> xs, ys, ctxs;
    candidate_data(buffer_, input, output, kBufferLimit, xs, ys, &ctxs);
    for (std::size_t i = 0; i < xs.size(); ++i) a.samples.push_back({xs[i], ctxs[i], ys[i]});
    affordances_.push_back(a);
    controllable_.insert(output);
    return a;
  }

  /// Feeds one new transition to every affordance it informs.
  std::vector<RefineOutcome> refine_all(const Transition& t) {
    std::vector<RefineOutcome> out;
    for (auto& a : affordances_) {
      const auto dy = t.delta(a.output);
      if (!dy || norm(*dy) == 0.0) continue;
      Vec x;
      if (a.input.is_action()) {
        x = t.primitive;
      } else {
        const auto dx = t.delta(a.input.space);
        if (!dx || norm(*dx) == 0.0) continue;
        x = *dx;
      }
      out.push_back(refine(a, {x, t.context, *dy}, params_));
    }
    return out;
  }

  /// Edges output -> input of the affordance graph form no cycle.
  bool acyclic() const {
    std::map<SpaceId, std::vector<SpaceId>> g;
    for (const auto& a : affordances_) g[a.output].push_back(a.input.space);
    std::map<SpaceId, int> state;
    std::function<bool(SpaceId)> dfs = [&](SpaceId u) {
      state[u] = 1;
      for (auto v : g[u]) {
        if (state[v] == 1) return false;
        if (state[v] == 0 && !dfs(v)) return false;
      }
      state[u] = 2;
      return true;
    };
    for (const auto& [u, _] : g)
      if (state[u] == 0 && !dfs(u)) return false;
    return true;
  }

  std::string to_text(const std::vector<std::string>& context_names = {}) const {
    std::ostringstream os;
    os.precision(6);
    for (const auto& a : affordances_) {
      os << "M" << a.id << " input=" << (a.input.is_action() ? std::string("A") : name(a.input.space))
         << " output=" << name(a.output) << " context=[";
      for (std::size_t i = 0; i < a.context_dims.size(); ++i) {
        const auto d = a.context_dims[i];
        os << (i ? "," : "") << (d < context_names.size() ? context_names[d] : std::to_string(d));
      }
      os << "] created=" << a.created << " samples=" << a.samples.size() << " error=" << a.median_error()
         << " r2=" << a.r2 << " status=" << (a.status == AffordanceStatus::Active ? "active" : "candidate") << "\n";
    }
    return os.str();
  }

  // state restoration (snapshots)
  void restore(std::vector<Affordance> affs, std::set<SpaceId> controllable) {
    affordances_ = std::move(affs);
    controllable_ = std::move(controllable);
  }

 private:
  static constexpr std::size_t kBufferLimit = 4000;

  std::string name(SpaceId s) const { return spaces_.at(static_cast<std::size_t>(s.value)).name; }

  std::vector<OutcomeSpace> spaces_;
  std::size_t action_dim_ = 0;
  AffordanceParams params_;
  std::vector<Affordance> affordances_;
  std::set<SpaceId> controllable_;
  std::deque<Transition> buffer_;
};

// ---------------------------------------------------------------------------
// Planning and execution

/// Closed-loop access to the world during planning.
class PlanWorld {
 public:
  virtual ~PlanWorld() = default;
  virtual std::optional<Vec> value(SpaceId s) const = 0;
  virtual Vec context() const = 0;
  /// Executes a primitive; false once the primitive budget is exhausted.
  virtual bool execute(const ActionPrimitive& a) = 0;
};

struct PlanResult {
  ControllableSequence sequence;
  bool reached = false;
  std::string error;  ///< "plan failed", "no affordance", ...
};

/// Greedy chaining toward `goal`: intermediate subgoals at most one reach
/// step away, each realized through the affordance's inverse model
/// (recursively for outcome inputs).
inline PlanResult plan(const Outcome& goal, const AffordanceRegistry& reg, PlanWorld& world,
                       const std::function<double(SpaceId)>& reach, const std::vector<OutcomeSpace>& spaces,
                       int depth = 0) {
  PlanResult res;
  const Affordance* aff = reg.for_output(goal.space);
  if (!aff) {
    res.error = "no affordance";
    return res;
  }
  if (depth > static_cast<int>(spaces.size())) {
    res.error = "plan failed";
    return res;
  }
  const auto& sp = spaces.at(static_cast<std::size_t>(goal.space.value));
  const double tol = reg.params().plan_tolerance * sp.diameter();
  for (int step = 0;; ++step) {
    const auto cur = world.value(goal.space);
    if (!cur) {
      res.error = "plan failed";
      return res;
    }
    const double dist = distance(*cur, goal.value);
    if (dist <= tol) {
      res.reached = true;
      return res;
    }
    if (step >= reg.params().plan_max_steps) {
      res.error = "plan failed";
      return res;
    }
    double r = reach(goal.space);
    if (!(r > 0.0)) r = 0.1 * sp.diameter();
    const double f = std::min(r, dist) / dist;
    Vec dy(cur->size());
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = f * (goal.value[i] - (*cur)[i]);
    const auto x = aff->inverse(dy, world.context(), reg.params().window);
    if (!x) {
      res.error = "plan failed";
      return res;
    }
    if (aff->input.is_action()) {
      ActionPrimitive p{*x};
      p.clip();
      res.sequence.push_back(p);
      if (!world.execute(p)) {
        res.error = "plan failed";
        return res;
      }
    } else {
      const auto in_cur = world.value(aff->input.space);
      if (!in_cur) {
        res.error = "plan failed";
        return res;
      }
      Outcome sub{aff->input.space, *in_cur};
      for (std::size_t i = 0; i < sub.value.size(); ++i) sub.value[i] += (*x)[i];
      spaces.at(static_cast<std::size_t>(sub.space.value)).clip(sub.value);
      res.sequence.push_back(sub);
      const auto inner = plan(sub, reg, world, reach, spaces, depth + 1);
      if (inner.error == "no affordance" || (!inner.error.empty() && inner.sequence.empty())) {
        res.error = "plan failed";
        return res;
      }
    }
  }
}

struct ExecutionTrace {
  std::vector<Controllable> elements;  ///< primitives and intermediate outcomes in order
  bool failed = false;
  std::string error;
};

/// Executes a controllable sequence: primitives directly, controllable
/// outcomes by planning.
inline ExecutionTrace execute_sequence(const ControllableSequence& lc, const AffordanceRegistry& reg, PlanWorld& world,
                                       const std::function<double(SpaceId)>& reach,
                                       const std::vector<OutcomeSpace>& spaces) {
  ExecutionTrace t;
  for (const auto& c : lc) {
    if (is_primitive(c)) {
      t.elements.push_back(c);
      if (!world.execute(std::get<ActionPrimitive>(c))) {
        t.error = "primitive budget exhausted";
        return t;
      }
      continue;
    }
    const auto& o = std::get<Outcome>(c);
    if (!reg.is_controllable(o.space)) {
      t.failed = true;
      t.error = "outcome element not controllable";
      return t;
    }
    t.elements.push_back(c);
    auto r = plan(o, reg, world, reach, spaces);
    t.elements.insert(t.elements.end(), r.sequence.begin(), r.sequence.end());
    if (!r.error.empty()) t.error = r.error;
  }
  return t;
}

}  // namespace sgim
