// Acceptance run: one PASS/FAIL line per criterion. Exit status 1 when any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "oracles.hpp"
#include "pae/harness.hpp"

using namespace pae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Pipeline {
  ExperimentConfig cfg;
  QuadraticSdcSystem sys;
  GenerateResult generated;
  TrainResult trained;
  CompareResult compare;
  SweepResult sweep;
};

std::string num(double x) {
  std::ostringstream s;
  s.precision(4);
  s << x;
  return s.str();
}

double fit_slope(const std::vector<double>& t, const std::vector<double>& f) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mx += std::log(t[i]);
    my += std::log(f[i]);
  }
  mx /= static_cast<double>(t.size());
  my /= static_cast<double>(t.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxy += (std::log(t[i]) - mx) * (std::log(f[i]) - my);
    sxx += std::pow(std::log(t[i]) - mx, 2);
  }
  return sxy / sxx;
}

// --- criteria ---------------------------------------------------------------

Outcome multiindex_counts() {
  const auto deg2 = [](Index r) {
    std::size_t n = 0;
    for (const auto& a : enumerate_multiindices(r, 2)) n += a.degree() == 2;
    return n;
  };
  const std::size_t c[] = {enumerate_multiindices(10, 1).size(), enumerate_multiindices(5, 1).size(),
                           enumerate_multiindices(5, 2).size(), enumerate_multiindices(5, 3).size(), deg2(5)};
  std::ostringstream s;
  s << "counts " << c[0] << "/" << c[1] << "/" << c[2] << "/" << c[3] << ", degree-2 " << c[4];
  return {c[0] == 11 && c[1] == 6 && c[2] == 21 && c[3] == 56 && c[4] == 15, s.str()};
}

Outcome clustering_jacobian(const Pipeline& pl) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = init_autoencoder(pl.sys.n(), pl.cfg.training.r, pl.cfg.training.q, pl.cfg.training.sharpness, seed);
    worst = std::max(worst, clustering_jacobian_fd(m, Vector::Zero(m.r), 1e-5).cwiseAbs().maxCoeff());
  }
  const auto& trained = pl.trained.models.at(pl.cfg.training.q);
  const double t = clustering_jacobian_fd(trained, Vector::Zero(trained.r), 1e-5).cwiseAbs().maxCoeff();
  return {std::max(worst, t) <= 1e-6, "max |entry| random " + num(worst) + ", trained " + num(t)};
}

Outcome simplex_invariants(const Pipeline& pl) {
  const auto& m = pl.trained.models.at(pl.cfg.training.q);
  Rng rng(7);
  double worst_sum = 0.0, worst_neg = 0.0;
  const double scale = pl.generated.training.states.cwiseAbs().maxCoeff();
  for (int i = 0; i < 1000; ++i) {
    const Vector v = rng.normal_matrix(m.n, 1) * scale * std::pow(10.0, rng.uniform(-3, 1));
    const Encoding e = encode(m, v);
    Vector mu(m.r + 1);
    mu << e.rho0, e.rho;
    const Vector c = cluster_weights(m, e.rho);
    worst_sum = std::max({worst_sum, std::abs(mu.sum() - 1.0), std::abs(c.sum() - 1.0)});
    worst_neg = std::min({worst_neg, mu.minCoeff(), c.minCoeff()});
  }
  const Encoding zero = encode(m, Vector::Zero(m.n));
  const bool origin = zero.rho0 == 1.0 && zero.rho.isZero(0.0) && decode(m, Vector::Zero(m.r)).isZero(0.0);
  return {worst_sum <= 1e-12 && worst_neg >= 0.0 && origin,
          "max |sum - 1| " + num(worst_sum) + ", min entry " + num(worst_neg) + (origin ? ", origin exact" : ", origin NOT exact")};
}

Outcome scalar_oracle() {
  LpvCoefficients lpv;
  lpv.a0 = Matrix::Zero(1, 1);
  lpv.a = {Matrix::Ones(1, 1)};
  const Matrix one = Matrix::Ones(1, 1);
  const auto exp = compute_expansion_coefficients(lpv, one, one, 1.0, 2);
  const double e = std::max({std::abs(exp.p[0](0, 0) - 1.0), std::abs(exp.p[1](0, 0) - 1.0),
                             std::abs(exp.p[2](0, 0) - 0.5)});
  return {e <= 1e-10, "(P0, P1, P2) = (" + num(exp.p[0](0, 0)) + ", " + num(exp.p[1](0, 0)) + ", " +
                          num(exp.p[2](0, 0)) + "), max error " + num(e)};
}

Outcome residual_order(const Pipeline& pl) {
  const auto& model = pl.trained.models.at(pl.cfg.training.q);
  const auto lpv = lpv_coefficients_first_order(pl.sys, model);
  const double gamma = pl.cfg.compare_gamma;
  Rng rng(11);
  std::vector<Vector> rays;
  for (int i = 0; i < 5; ++i) rays.push_back(rng.normal_matrix(model.r, 1).normalized());
  auto min_slope = [&](const FeedbackExpansion& exp) {
    double worst = std::numeric_limits<double>::infinity();
    for (const Vector& d : rays) {
      std::vector<double> ts, rs;
      for (int k = 0; k <= 8; ++k) {
        const double t = 1e-3 * std::pow(10.0, k / 4.0);
        ts.push_back(t);
        rs.push_back(expansion_residual(exp, lpv, pl.sys.b, pl.sys.c, gamma, t * d));
      }
      worst = std::min(worst, fit_slope(ts, rs));
    }
    return worst;
  };
  const double s1 = min_slope(compute_expansion_coefficients(lpv, pl.sys.b, pl.sys.c, gamma, 1));
  auto exp2 = compute_expansion_coefficients(lpv, pl.sys.b, pl.sys.c, gamma, 2);
  const double s2 = min_slope(exp2);
  // Doubling the repeated-index right-hand side doubles P_{2 e_i}.
  for (std::size_t i = 0; i < exp2.size(); ++i) {
    const auto& e = exp2.indices[i].exponents;
    if (std::find(e.begin(), e.end(), 2) != e.end()) exp2.p[i] *= 2.0;
  }
  const double doubled = min_slope(exp2);
  return {s1 >= 1.5 && s2 >= 2.5 && doubled < 2.5,
          "min slope p=1 " + num(s1) + ", p=2 " + num(s2) + ", p=2 with doubled repeated-index term " + num(doubled)};
}

Outcome matrix_oracles() {
  using namespace oracle;
  Rng rng(21);
  double lyap = 0, care = 0, ldl1 = 0, ldl2 = 0;
  bool hurwitz = true;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.below(8));
    const Matrix f = random_hurwitz(rng, n);
    const Matrix q = random_symmetric(rng, n);
    lyap = std::max(lyap, rel(solve_lyapunov(f, q), lyapunov_oracle(f, q)));
    const CareInstance ci = random_care_instance(rng);
    const Matrix p = solve_care(ci.a, ci.b, ci.c);
    care = std::max(care, rel(p, ci.p));
    hurwitz = hurwitz && spectral_abscissa(ci.a - ci.b * ci.b.transpose() * p) < 0.0;

    const Index m = 6;
    const Matrix z0 = rng.normal_matrix(m, 1 + static_cast<Index>(rng.below(3)));
    const Matrix aa = rng.normal_matrix(m, m);
    const Matrix p0 = z0 * z0.transpose();
    ldl1 = std::max(ldl1, rel(build_ldl_rhs_order1(z0, aa).product(), -(aa.transpose() * p0 + p0 * aa)));
    const Matrix bb = rng.normal_matrix(m, 2);
    Matrix pb, ab, pd, ad;
    const FirstOrderFactor fb = first_order(rng, m, 2, bb, pb, ab);
    const FirstOrderFactor fd = first_order(rng, m, 3, bb, pd, ad);
    const Matrix astar = rng.normal_matrix(m, m);
    ldl2 = std::max(ldl2, rel(build_ldl_rhs_order2(z0, astar, bb, fb, fd).product(),
                              dense_order2(p0, astar, bb, pb, ab, pd, ad, false)));
    ldl2 = std::max(ldl2, rel(build_ldl_rhs_order2(z0, Matrix::Zero(m, m), bb, fb).product(),
                              dense_order2(p0, Matrix::Zero(m, m), bb, pb, ab, pb, ab, true)));
  }
  return {lyap <= 1e-10 && care <= 1e-10 && hurwitz && ldl1 <= 1e-12 && ldl2 <= 1e-12,
          "rel. errors Lyapunov " + num(lyap) + ", CARE " + num(care) + (hurwitz ? " (Hurwitz)" : " (NOT Hurwitz)") +
              ", LDL order 1 " + num(ldl1) + ", order 2 " + num(ldl2)};
}

Outcome gradient_check(const Pipeline& pl) {
  auto m = init_autoencoder(pl.sys.n(), pl.cfg.training.r, pl.cfg.training.q, pl.cfg.training.sharpness, 3);
  const Matrix& s = pl.generated.training.states;
  Matrix v(s.rows(), 3);
  v << s.col(100), s.col(250), s.col(400);
  const Matrix labels = one_hot({0, 1, 2}, m.q);
  const LossOptions opt{pl.cfg.training.lambda, true};
  const auto lg = loss_and_gradient(m, v, labels, pl.sys.mass, opt);
  double worst = 0.0;
  auto check = [&](Matrix& w, const Matrix& g) {
    Matrix fd(w.rows(), w.cols());
    for (Index i = 0; i < w.size(); ++i) {
      const double keep = w.data()[i];
      const double h = 1e-6 * std::max(1.0, std::abs(keep));
      w.data()[i] = keep + h;
      const double up = loss_and_gradient(m, v, labels, pl.sys.mass, opt, false).loss;
      w.data()[i] = keep - h;
      const double down = loss_and_gradient(m, v, labels, pl.sys.mass, opt, false).loss;
      w.data()[i] = keep;
      fd.data()[i] = (up - down) / (2 * h);
    }
    worst = std::max(worst, oracle::rel(g, fd));
  };
  for (std::size_t l = 0; l < m.encoder.size(); ++l) check(m.encoder[l], lg.gradient.encoder[l]);
  for (std::size_t l = 0; l < m.clustering.size(); ++l) check(m.clustering[l], lg.gradient.clustering[l]);
  check(m.decoder, lg.gradient.decoder);
  return {worst <= 1e-5, "max relative gradient error " + num(worst)};
}

Outcome reconstruction_trend(const Pipeline& pl) {
  const Index q = pl.cfg.training.q;
  auto get = [&](const std::string& scheme, Index r) -> std::optional<double> {
    for (const ReportCell& c : pl.trained.report)
      if (c.scheme == scheme && c.r == r) return c.error;
    return std::nullopt;
  };
  bool pass = true;
  std::ostringstream s;
  s << "x1e3 (POD, PAE 1, PAE " << q << ", surrogate):";
  for (Index r : {2, 3}) {
    const auto pod = get("POD", r), p1 = get("PAE 1", r), pq = get("PAE " + std::to_string(q), r),
               sur = get("PAE " + std::to_string(q) + " (p=1)", r);
    if (!pod || !p1 || !pq || !sur) {
      s << " r=" << r << " missing";
      pass = false;
      continue;
    }
    const bool ok = *pq < *p1 && *pq < *pod && *sur > *pq;
    pass = pass && ok;
    s << " r=" << r << " (" << num(*pod * 1e3) << ", " << num(*p1 * 1e3) << ", " << num(*pq * 1e3) << ", "
      << num(*sur * 1e3) << ")" << (ok ? "" : " violated");
  }
  return {pass, s.str()};
}

Outcome sdre_ordering(const Pipeline& pl) {
  const Index q = pl.cfg.training.q;
  const auto& res = pl.compare;
  const auto it = std::find(res.qs.begin(), res.qs.end(), q);
  if (it == res.qs.end()) return {false, "no comparison for q = " + std::to_string(q)};
  const std::size_t base = static_cast<std::size_t>(it - res.qs.begin()) * 4;
  const auto lpv = res.train_window_average[base], p0 = res.train_window_average[base + 1],
             p1 = res.train_window_average[base + 2], p2 = res.train_window_average[base + 3];
  if (!lpv || !p0 || !p1) return {false, "incomplete comparison (synthesis or CARE failure)"};
  return {*p1 <= *p0 && *lpv <= *p1, "window averages lpv " + num(*lpv) + ", p0 " + num(*p0) + ", p1 " + num(*p1) +
                                         ", p2 " + (p2 ? num(*p2) : std::string("n/a"))};
}

Outcome closed_loop(const Pipeline& pl) {
  const auto& cfg = pl.cfg;
  std::ostringstream s;
  // (a) uncontrolled continuation of the startup phase
  SimulationOptions opt;
  opt.dt = cfg.dt;
  opt.blowup_threshold = detail::blowup_threshold(cfg);
  const Index m = pl.sys.m();
  const auto ol = simulate_open_loop(
      pl.sys, [&](double t) { return t < cfg.t_train ? test_input(t, m) : Vector(Vector::Zero(m)); }, cfg.t_end, opt);
  const bool a = ol.blowup;
  s << "(a) " << (a ? "blowup at t=" + num(ol.blowup_time.value_or(0)) : "no blowup");

  // (b) p = 0, best gamma at the smallest t_s
  const Index q = cfg.training.q;
  const double ts0 = *std::min_element(cfg.ts_list.begin(), cfg.ts_list.end());
  const SweepCellResult* best = nullptr;
  for (double g : cfg.gammas) {
    const auto* c = pl.sweep.find(q, 0, g, ts0);
    if (c && c->index && (!best || *c->index < *best->index)) best = c;
  }
  const bool b = best && best->norm_at_end < 0.01 * best->norm_at_ts;
  s << "; (b) ";
  if (best)
    s << "gamma=" << num(best->cell.gamma) << " t_s=" << num(ts0) << " index " << num(*best->index) << ", |v(T)|/|v(t_s)| "
      << num(best->norm_at_end / best->norm_at_ts);
  else
    s << "no finite cell at t_s=" << num(ts0);

  // (c) p = 2 basin contains the p = 0 basin
  int added = 0, lost = 0, base = 0;
  for (double g : cfg.gammas)
    for (double ts : cfg.ts_list) {
      const auto* c0 = pl.sweep.find(q, 0, g, ts);
      const auto* c2 = pl.sweep.find(q, 2, g, ts);
      if (!c0 || !c2) continue;
      base += c0->index.has_value();
      if (c2->index && !c0->index) ++added;
      if (c0->index && !c2->index) ++lost;
    }
  const bool c = lost == 0 && added >= 1;
  s << "; (c) p=0 finite " << base << ", p=2 adds " << added << ", loses " << lost;
  return {a && b && c, s.str()};
}

Outcome determinism() {
  const fs::path dir = fs::current_path() / "acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Json cfg = Json::parse(R"({
    "benchmark": {"n_grid": 24},
    "training": {"r": 3, "q": 2, "epochs": 60},
    "report": {"r_list": [2, 3], "epochs": 40},
    "gridsearch": {"r_list": [2, 3], "q_list": [1, 2], "epochs": 30},
    "sweep": {"gamma_list": [1.0, 0.1], "ts_list": [0.2, 0.4], "p_list": [0, 1, 2], "q_list": [1, 2], "t_end": 2.0,
              "marks": [{"gamma": 1.0, "ts": 0.2, "p": 2, "q": 2}]},
    "compare": {"gamma": 1.0, "stride": 20}
  })");
  write_text_file((dir / "config.json").string(), cfg.dump(1));
  const char* verbs[] = {"generate", "train", "gridsearch", "synthesize", "sdre-compare", "fbsweep", "model-summary"};
  for (const char* run : {"a", "b"}) {
    for (const char* verb : verbs) {
      const std::string cmd = std::string(PAE_SDRE_EXE) + " " + verb + " --config " + (dir / "config.json").string() +
                              " --seed 4 --out " + (dir / run).string() + " 2> /dev/null";
      const int st = std::system(cmd.c_str());
      if (!WIFEXITED(st) || WEXITSTATUS(st) != 0) return {false, std::string(verb) + " failed in run " + run};
    }
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const fs::path other = dir / "b" / e.path().filename();
    if (!fs::exists(other) || read_text_file(e.path().string()) != read_text_file(other.string()))
      return {false, e.path().filename().string() + " differs between runs"};
    ++files;
  }
  return {files > 0, std::to_string(files) + " files byte-identical across two runs of all 7 verbs"};
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  Pipeline pl;
  pl.cfg.out = (fs::current_path() / "acceptance_out").string();
  pl.sys = make_burgers_benchmark(pl.cfg.benchmark);
  // Criterion 8 only needs r in {2, 3}.
  pl.cfg.report_r = {2, 3};

  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << " (" << num(secs)
              << " s)\n";
  };

  std::ostringstream log;
  auto stage = [&](const char* what, const std::function<void()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    std::cerr << "pipeline: " << what << " "
              << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) << " s\n";
  };
  try {
    stage("generate", [&] { pl.generated = cmd_generate(pl.cfg, log); });
    stage("train", [&] { pl.trained = cmd_train(pl.cfg, log); });
    stage("synthesize", [&] { cmd_synthesize(pl.cfg, log); });
    stage("sdre-compare", [&] { pl.compare = cmd_sdre_compare(pl.cfg, log); });
    stage("fbsweep", [&] { pl.sweep = cmd_fbsweep(pl.cfg, log); });
  } catch (const std::exception& e) {
    std::cerr << "pipeline failed: " << e.what() << "\n" << log.str();
  }

  report(1, "multiindex counts", multiindex_counts);
  report(2, "clustering Jacobian at the origin", [&] { return clustering_jacobian(pl); });
  report(3, "simplex invariants", [&] { return simplex_invariants(pl); });
  report(4, "scalar SDRE oracle", scalar_oracle);
  report(5, "expansion residual order", [&] { return residual_order(pl); });
  report(6, "matrix-equation oracles", matrix_oracles);
  report(7, "loss gradient check", [&] { return gradient_check(pl); });
  report(8, "reconstruction trend", [&] { return reconstruction_trend(pl); });
  report(9, "SDRE approximation ordering", [&] { return sdre_ordering(pl); });
  report(10, "closed-loop properties", [&] { return closed_loop(pl); });
  report(11, "CLI determinism", determinism);
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed\n" : std::string("all criteria passed\n"));
  return failed ? 1 : 0;
}
