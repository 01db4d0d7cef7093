#include "cfqi/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cfqi/errors.hpp"
#include "cfqi/normal.hpp"
#include "cfqi/survival.hpp"

namespace cfqi {

Discretization Discretization::for_env(const EnvConfig& env, int n_cap, int ir_bins) {
  if (n_cap < 0) throw ConfigError("n_cap", "must be >= 0");
  if (ir_bins < 1) throw ConfigError("ir_bins", "must be >= 1");
  Discretization d;
  d.ir_bound = env.features.ir_bound();
  d.ir_bins = d.ir_bound > 0.0 ? ir_bins : 1;
  d.n_y = static_cast<int>(std::floor(env.y_cap)) + 1;
  d.n_d = static_cast<int>(std::floor(env.demand.d_max)) + 1;
  d.n_runs = n_cap + 1;
  return d;
}

int Discretization::ir_bin(double ir) const {
  if (ir_bins == 1) return 0;
  const double w = 2.0 * ir_bound / ir_bins;
  return std::clamp(static_cast<int>(std::floor((ir + ir_bound) / w)), 0, ir_bins - 1);
}

double Discretization::ir_center(int bin) const {
  if (ir_bins == 1) return 0.0;
  const double w = 2.0 * ir_bound / ir_bins;
  return -ir_bound + (bin + 0.5) * w;
}

int Discretization::y_level(double y) const { return std::clamp(static_cast<int>(std::lround(y)), 0, n_y - 1); }
int Discretization::d_level(double d) const { return std::clamp(static_cast<int>(std::lround(d)), 0, n_d - 1); }

json Discretization::to_json() const {
  return {{"ir_bins", ir_bins}, {"ir_bound", ir_bound}, {"n_y", n_y}, {"n_d", n_d}, {"n_runs", n_runs}};
}

Discretization Discretization::from_json(const json& j) {
  Discretization d;
  d.ir_bins = j.at("ir_bins").get<int>();
  d.ir_bound = j.at("ir_bound").get<double>();
  d.n_y = j.at("n_y").get<int>();
  d.n_d = j.at("n_d").get<int>();
  d.n_runs = j.at("n_runs").get<int>();
  if (d.ir_bins < 1 || d.n_y < 1 || d.n_d < 1 || d.n_runs < 1) throw std::invalid_argument("bad discretization");
  return d;
}

std::vector<double> demand_bin_probs(double mean, double sd, int n_d) {
  std::vector<double> p(static_cast<std::size_t>(n_d), 0.0);
  if (!(sd > 0.0)) {
    p[static_cast<std::size_t>(std::clamp(static_cast<int>(std::lround(mean)), 0, n_d - 1))] = 1.0;
    return p;
  }
  double below = 0.0;
  for (int k = 0; k < n_d - 1; ++k) {
    const double upto = normal::cdf((k + 0.5 - mean) / sd);
    p[static_cast<std::size_t>(k)] = std::max(0.0, upto - below);
    below = upto;
  }
  p.back() = std::max(0.0, 1.0 - below);
  return p;
}

namespace belief {

std::vector<double> point(int n_d, double d) {
  std::vector<double> b(static_cast<std::size_t>(n_d), 0.0);
  b[static_cast<std::size_t>(std::clamp(static_cast<int>(std::lround(d)), 0, n_d - 1))] = 1.0;
  return b;
}

std::vector<double> predict(const DemandParams& dp, const Features& x, double price, const std::vector<double>& prev) {
  const int n_d = static_cast<int>(prev.size());
  std::vector<double> out(prev.size(), 0.0);
  for (int d = 0; d < n_d; ++d) {
    const double w = prev[static_cast<std::size_t>(d)];
    if (w <= 0.0) continue;
    const auto p = demand_bin_probs(dp.mean(x, price, d), dp.noise_sd, n_d);
    for (std::size_t k = 0; k < p.size(); ++k) out[k] += w * p[k];
  }
  return out;
}

double condition_above(std::vector<double>& pred, double y) {
  double mass = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (static_cast<double>(k) <= y) pred[k] = 0.0;
    mass += pred[k];
  }
  if (mass > 0.0) {
    for (auto& v : pred) v /= mass;
  } else {
    std::fill(pred.begin(), pred.end(), 0.0);
    pred.back() = 1.0;
  }
  return mass;
}

double mean(const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) m += static_cast<double>(k) * b[k];
  return m;
}

}  // namespace belief

namespace {

// Transition matrix of the discretised covariates.
std::vector<double> x_transition(const FeatureProcess& fp, const Discretization& disc) {
  const int nx = disc.n_x();
  std::vector<double> ir(static_cast<std::size_t>(disc.ir_bins * disc.ir_bins), 0.0);
  for (int b = 0; b < disc.ir_bins; ++b) {
    const double mu = fp.ir_ar_coeff * disc.ir_center(b);
    if (disc.ir_bins == 1) {
      ir[0] = 1.0;
      break;
    }
    if (!(fp.ir_noise_sd > 0.0)) {
      ir[static_cast<std::size_t>(b * disc.ir_bins + disc.ir_bin(mu))] = 1.0;
      continue;
    }
    const double w = 2.0 * disc.ir_bound / disc.ir_bins;
    double below = 0.0;
    for (int j = 0; j < disc.ir_bins - 1; ++j) {
      const double upto = normal::cdf((-disc.ir_bound + (j + 1) * w - mu) / fp.ir_noise_sd);
      ir[static_cast<std::size_t>(b * disc.ir_bins + j)] = upto - below;
      below = upto;
    }
    ir[static_cast<std::size_t>(b * disc.ir_bins + disc.ir_bins - 1)] = 1.0 - below;
  }
  std::vector<double> P(static_cast<std::size_t>(nx * nx), 0.0);
  const double q = fp.econ_switch_prob;
  for (int a = 0; a < nx; ++a)
    for (int b = 0; b < nx; ++b) {
      const double pe = (a % 2 == b % 2) ? 1.0 - q : q;
      P[static_cast<std::size_t>(a * nx + b)] = ir[static_cast<std::size_t>((a / 2) * disc.ir_bins + b / 2)] * pe;
    }
  return P;
}

struct Prepared {
  Discretization disc;
  TabularKind kind;
  int trunc_r = 0;
  bool amax_only_at_cap = false;
  std::vector<double> px;  // n_x * n_x
  // pred[((r * n_x + xi) * n_d + m) * n_p + pi] -> n_d probabilities
  std::vector<std::vector<double>> pred;
  // censored kind: next posterior-mean level after a censored period, indexed like pred with y appended
  std::vector<int> cens_next;
  std::size_t n_p = 0;

  const std::vector<double>& at(int r, int xi, int m, std::size_t pi) const {
    return pred[((static_cast<std::size_t>(r) * disc.n_x() + xi) * disc.n_d + m) * n_p + pi];
  }
  int censored_next(int r, int xi, int m, std::size_t pi, int y) const {
    return cens_next[(((static_cast<std::size_t>(r) * disc.n_x() + xi) * disc.n_d + m) * n_p + pi) * disc.n_y + y];
  }
};

Prepared prepare(const EnvConfig& env, const DpConfig& cfg, TabularKind kind) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw ConfigError("gamma", "must lie in [0, 1)");
  if (env.truncates() && cfg.n_cap < env.max_censor_run)
    throw ConfigError("n_cap", "must be >= the generator's censoring cap " + std::to_string(env.max_censor_run));
  Prepared P;
  P.disc = Discretization::for_env(env, cfg.n_cap);
  P.kind = kind;
  if (!env.truncates() && kind == TabularKind::censored && cfg.n_cap < 1)
    throw ConfigError("n_cap", "must be >= 1 when the generator does not cap censoring runs");
  // Without a generator cap the censored solver stops tracking at n_cap and plays a_max there; the
  // full-information solver never needs the run.
  if (env.truncates())
    P.trunc_r = std::min(env.max_censor_run, cfg.n_cap);
  else
    P.trunc_r = kind == TabularKind::censored ? cfg.n_cap : cfg.n_cap + 1;
  P.amax_only_at_cap = !env.truncates() && kind == TabularKind::censored;
  P.px = x_transition(env.features, P.disc);
  P.n_p = env.actions.prices().size();
  const auto& disc = P.disc;
  const auto& prices = env.actions.prices();

  std::vector<std::vector<std::vector<double>>> beliefs(static_cast<std::size_t>(disc.n_runs));
  for (int r = 0; r < disc.n_runs; ++r)
    for (int m = 0; m < disc.n_d; ++m) beliefs[static_cast<std::size_t>(r)].push_back(belief::point(disc.n_d, m));

  if (kind == TabularKind::censored) {
    // Representative posterior per (run, rounded mean): average of the posteriors that land there,
    // weighted by the probability of the censoring event that produced them.
    for (int r = 1; r <= P.trunc_r && r < disc.n_runs; ++r) {
      std::vector<std::vector<double>> acc(static_cast<std::size_t>(disc.n_d),
                                           std::vector<double>(static_cast<std::size_t>(disc.n_d), 0.0));
      for (int xi = 0; xi < disc.n_x(); ++xi)
        for (int m = 0; m < disc.n_d; ++m)
          for (std::size_t pi = 0; pi < P.n_p; ++pi) {
            const auto pred = belief::predict(env.demand, disc.x_center(xi), prices[pi],
                                              beliefs[static_cast<std::size_t>(r - 1)][static_cast<std::size_t>(m)]);
            for (int y = 0; y < disc.n_y && y < disc.n_d - 1; ++y) {
              auto post = pred;
              const double w = belief::condition_above(post, y);
              if (w <= 0.0) continue;
              auto& slot = acc[static_cast<std::size_t>(disc.d_level(belief::mean(post)))];
              for (std::size_t k = 0; k < post.size(); ++k) slot[k] += w * post[k];
            }
          }
      for (int m = 0; m < disc.n_d; ++m) {
        auto& a = acc[static_cast<std::size_t>(m)];
        double s = 0.0;
        for (double v : a) s += v;
        if (s > 0.0) {
          for (auto& v : a) v /= s;
          beliefs[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)] = a;
        }
      }
    }
  }

  P.pred.resize(static_cast<std::size_t>(disc.n_runs * disc.n_x() * disc.n_d) * P.n_p);
  if (kind == TabularKind::censored) P.cens_next.assign(P.pred.size() * static_cast<std::size_t>(disc.n_y), 0);
  for (int r = 0; r < disc.n_runs; ++r)
    for (int xi = 0; xi < disc.n_x(); ++xi)
      for (int m = 0; m < disc.n_d; ++m)
        for (std::size_t pi = 0; pi < P.n_p; ++pi) {
          const std::size_t idx = ((static_cast<std::size_t>(r) * disc.n_x() + xi) * disc.n_d + m) * P.n_p + pi;
          const auto& b = kind == TabularKind::censored ? beliefs[static_cast<std::size_t>(r)][static_cast<std::size_t>(m)]
                                                        : beliefs[0][static_cast<std::size_t>(m)];
          P.pred[idx] = belief::predict(env.demand, disc.x_center(xi), prices[pi], b);
          if (kind == TabularKind::censored) {
            for (int y = 0; y < disc.n_y; ++y) {
              auto post = P.pred[idx];
              belief::condition_above(post, y);
              P.cens_next[idx * static_cast<std::size_t>(disc.n_y) + static_cast<std::size_t>(y)] =
                  disc.d_level(belief::mean(post));
            }
          }
        }
  return P;
}

DpResult solve(const EnvConfig& env, const DpConfig& cfg, TabularKind kind) {
  env.validate();
  const Prepared P = prepare(env, cfg, kind);
  const auto& disc = P.disc;
  const auto& grid = env.actions;
  const std::size_t n_a = grid.size();
  const std::size_t n_keys = disc.n_keys();
  const int nx = disc.n_x();
  const double r_max = r_max_bound(env);
  const double tol = cfg.tol_factor * std::max(r_max, 1e-12);

  std::vector<int> order_level(n_a);
  for (std::size_t a = 0; a < n_a; ++a) order_level[a] = static_cast<int>(std::lround(grid.at(a).order));

  // Weights over demand levels and expected reward for every (key, action).
  struct Cell {
    const std::vector<double>* pred;
    double scale;  // renormalisation under truncation
    bool truncated;
  };
  auto cell = [&](int r, int xi, int y, int m, std::size_t pi) {
    const auto& pred = P.at(r, xi, m, pi);
    Cell c{&pred, 1.0, r >= P.trunc_r};
    if (c.truncated) {
      double below = 0.0;
      for (int k = 0; k <= y && k < disc.n_d; ++k) below += pred[static_cast<std::size_t>(k)];
      c.scale = below > 0.0 ? 1.0 / below : 0.0;
    }
    return c;
  };

  std::vector<double> R(n_keys * n_a, 0.0);
  for (int r = 0; r < disc.n_runs; ++r)
    for (int xi = 0; xi < nx; ++xi)
      for (int y = 0; y < disc.n_y; ++y)
        for (int m = 0; m < disc.n_d; ++m) {
          const std::size_t key = disc.key(r, xi, y, m);
          for (std::size_t a = 0; a < n_a; ++a) {
            const auto act = grid.at(a);
            const Cell c = cell(r, xi, y, m, grid.price_index(a));
            double er = 0.0;
            if (c.truncated && c.scale == 0.0) {
              er = reward(env.costs, act.price, act.order, y, 0.0);
            } else {
              for (int k = 0; k < disc.n_d; ++k) {
                if (c.truncated && k > y) break;
                er += c.scale * (*c.pred)[static_cast<std::size_t>(k)] * reward(env.costs, act.price, act.order, y, k);
              }
            }
            R[key * n_a + a] = er;
          }
        }

  ValueTable table;
  table.disc = disc;
  table.gamma = cfg.gamma;
  table.values.assign(n_keys, 0.0);
  std::vector<double> W(n_keys, 0.0);
  std::vector<std::uint16_t> best(n_keys, 0);
  const std::size_t stride_x = static_cast<std::size_t>(disc.n_y * disc.n_d);
  int growing = 0;

  for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
    // W(r, x, y, m) = sum_x' P(x' | x) V(r, x', y, m)
    for (int r = 0; r < disc.n_runs; ++r)
      for (int xi = 0; xi < nx; ++xi) {
        double* out = &W[disc.key(r, xi, 0, 0)];
        std::fill(out, out + stride_x, 0.0);
        for (int xj = 0; xj < nx; ++xj) {
          const double w = P.px[static_cast<std::size_t>(xi * nx + xj)];
          if (w == 0.0) continue;
          const double* v = &table.values[disc.key(r, xj, 0, 0)];
          for (std::size_t s = 0; s < stride_x; ++s) out[s] += w * v[s];
        }
      }

    double delta = 0.0;
    std::vector<double> next(n_keys);
    for (int r = 0; r < disc.n_runs; ++r)
      for (int xi = 0; xi < nx; ++xi)
        for (int y = 0; y < disc.n_y; ++y)
          for (int m = 0; m < disc.n_d; ++m) {
            const std::size_t key = disc.key(r, xi, y, m);
            double best_q = -std::numeric_limits<double>::infinity();
            std::size_t best_a = 0;
            for (std::size_t a = 0; a < n_a; ++a) {
              if (P.amax_only_at_cap && r == disc.n_runs - 1 && a != grid.max_action_index()) continue;
              const std::size_t pi = grid.price_index(a);
              const Cell c = cell(r, xi, y, m, pi);
              const int o = order_level[a];
              double cont = 0.0;
              if (c.truncated && c.scale == 0.0) {
                cont = W[disc.key(0, xi, std::min(disc.n_y - 1, y + o), 0)];
              } else {
                const auto& pred = *c.pred;
                for (int k = 0; k <= y && k < disc.n_d; ++k) {
                  const int y2 = std::min(disc.n_y - 1, y - k + o);
                  cont += c.scale * pred[static_cast<std::size_t>(k)] * W[disc.key(0, xi, y2, k)];
                }
                if (!c.truncated) {
                  const int y2 = std::min(disc.n_y - 1, o);
                  if (kind == TabularKind::oracle) {
                    for (int k = y + 1; k < disc.n_d; ++k)
                      cont += pred[static_cast<std::size_t>(k)] * W[disc.key(std::min(r + 1, disc.n_runs - 1), xi, y2, k)];
                  } else {
                    double mass = 0.0;
                    for (int k = y + 1; k < disc.n_d; ++k) mass += pred[static_cast<std::size_t>(k)];
                    if (mass > 0.0) cont += mass * W[disc.key(r + 1, xi, y2, P.censored_next(r, xi, m, pi, y))];
                  }
                }
              }
              const double q = R[key * n_a + a] + cfg.gamma * cont;
              if (q > best_q) {
                best_q = q;
                best_a = a;
              }
            }
            next[key] = best_q;
            best[key] = static_cast<std::uint16_t>(best_a);
            delta = std::max(delta, std::abs(best_q - table.values[key]));
          }
    table.values.swap(next);
    table.sweep_deltas.push_back(delta);
    const auto n = table.sweep_deltas.size();
    growing = (n >= 2 && table.sweep_deltas[n - 1] > table.sweep_deltas[n - 2]) ? growing + 1 : 0;
    if (growing >= 5) throw NonContractionError("sweep delta increased for 5 consecutive sweeps");
    if (delta < tol) {
      table.converged = true;
      break;
    }
  }
  auto policy = std::make_shared<const TabularPolicy>(env, disc, kind, std::move(best));
  return {std::move(table), std::move(policy)};
}

}  // namespace

DpResult solve_censored_dp(const EnvConfig& env, const DpConfig& cfg) { return solve(env, cfg, TabularKind::censored); }
DpResult solve_oracle_dp(const EnvConfig& env, const DpConfig& cfg) { return solve(env, cfg, TabularKind::oracle); }

TabularPolicy::TabularPolicy(EnvConfig env, Discretization disc, TabularKind kind, std::vector<std::uint16_t> actions)
    : env_(std::move(env)), disc_(disc), kind_(kind), actions_(std::move(actions)) {
  if (actions_.size() != disc_.n_keys()) throw std::invalid_argument("policy table does not match the discretization");
  for (auto a : actions_)
    if (a >= env_.actions.size()) throw std::invalid_argument("policy table holds an action outside the grid");
}

std::size_t TabularPolicy::key_for(const DecisionContext& ctx) const {
  if (kind_ == TabularKind::oracle) {
    if (!ctx.truth) throw std::invalid_argument("oracle policy needs the underlying state");
    const int r = std::min(ctx.true_censor_run, disc_.n_runs - 1);
    const auto& s = *ctx.truth;
    return disc_.key(r, disc_.x_index(s.x), disc_.y_level(s.y), disc_.d_level(s.d_prev));
  }
  const auto obs = ctx.observations;
  if (obs.empty()) throw std::invalid_argument("censored policy needs the current observation");
  const int r = std::min(censoring_depth(obs), disc_.n_runs - 1);
  const auto& w = obs.back();
  int m = disc_.d_level(w.z_prev);
  if (r > 0) {
    const auto ur = static_cast<std::size_t>(r);
    if (obs.size() < ur + 1 || ctx.actions.size() < ur) throw std::invalid_argument("history shorter than censoring run");
    const std::size_t o0 = obs.size() - 1 - ur;
    const std::size_t a0 = ctx.actions.size() - ur;
    auto b = belief::point(disc_.n_d, obs[o0].z_prev);
    for (std::size_t j = 0; j < ur; ++j) {
      b = belief::predict(env_.demand, obs[o0 + j].x, ctx.actions[a0 + j].price, b);
      belief::condition_above(b, disc_.y_level(obs[o0 + j].y));
    }
    m = disc_.d_level(belief::mean(b));
  }
  return disc_.key(r, disc_.x_index(w.x), disc_.y_level(w.y), m);
}

Decision TabularPolicy::decide(const DecisionContext& ctx, Rng&) const {
  if (kind_ == TabularKind::censored && censoring_depth(ctx.observations) >= disc_.n_runs)
    return {env_.actions.max_action_index(), true, true};
  return {actions_[key_for(ctx)], false, false};
}

std::vector<double> TabularPolicy::probabilities(const DecisionContext& ctx) const {
  std::vector<double> p(env_.actions.size(), 0.0);
  Rng unused(0);
  p[decide(ctx, unused).action] = 1.0;
  return p;
}

json TabularPolicy::to_json() const {
  return {{"format", "cfqi-tabular-policy"},
          {"version", 1},
          {"kind", kind_ == TabularKind::oracle ? "oracle" : "censored"},
          {"env_fingerprint", env_.fingerprint()},
          {"env", env_.to_json()},
          {"disc", disc_.to_json()},
          {"actions", actions_}};
}

TabularPolicy TabularPolicy::from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "cfqi-tabular-policy") throw ParseError(1, "not a tabular policy");
  try {
    EnvConfig env = EnvConfig::from_json(j.at("env"));
    if (env.fingerprint() != j.at("env_fingerprint").get<std::string>())
      throw ParseError(1, "environment fingerprint does not match the embedded configuration");
    const auto kind = j.at("kind").get<std::string>() == "oracle" ? TabularKind::oracle : TabularKind::censored;
    return TabularPolicy(std::move(env), Discretization::from_json(j.at("disc")), kind,
                         j.at("actions").get<std::vector<std::uint16_t>>());
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("malformed tabular policy: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(1, std::string("malformed tabular policy: ") + e.what());
  }
}

void save_tabular_policy(const TabularPolicy& policy, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << policy.to_json().dump() << '\n';
}

TabularPolicy load_tabular_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return TabularPolicy::from_json(json::parse(buf.str()));
  } catch (const json::parse_error& e) {
    throw ParseError(1, std::string("corrupted tabular policy: ") + e.what());
  }
}

}  // namespace cfqi
