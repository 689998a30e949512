// Acceptance run: one [PASS]/[FAIL] line per criterion, exit status 1 if any
// criterion fails. Tolerances are fixed; nothing here adapts to the results.

#include <bit>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "fldm/fldm.hpp"

using namespace fldm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << id << ": " << what << " (" << detail << ")"
            << std::endl;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor random(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return uniform_tensor(std::move(shape), lo, hi, rng);
}

// Runs a criterion body; an exception counts as a failure with its message.
void guarded(int id, const std::string& what, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(id, false, what, std::string("exception: ") + e.what());
  }
}

// 1 ------------------------------------------------------------------------

void gradient_integrity() {
  const auto t0 = Clock::now();
  double worst_model = 0.0;
  for (std::size_t hidden : {std::size_t{0}, std::size_t{8}}) {
    ModelConfig c;
    c.lookback = 16;
    c.horizon = 8;
    c.variates = 3;
    c.state_dim = 4;
    c.ilt_modes = 2;
    c.hidden = hidden;
    c.random_filter_init = true;  // exercise non-trivial filter weights
    Model m(c, 7);
    const Tensor x = random({1, 16, 3}, 8);
    const Tensor probe = random({1, 8, 3}, 9);
    auto loss = [&]() { return sum(mul(m.forward(x), probe)); };
    for (auto& [name, t] : m.parameters()) worst_model = std::max(worst_model, grad_check_param(loss, t, 1e-5));
  }

  double worst_op = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor a = random({2, 3, 4}, 100 + seed);
    const Tensor b = random({3, 4}, 200 + seed);
    const Tensor mm = random({4, 5}, 300 + seed);
    const Tensor w = random({2, 3, 4}, 400 + seed);
    auto weighted = [&](const Tensor& t) { return sum(mul(t, w)); };
    const std::vector<std::function<Tensor(const Tensor&)>> cases = {
        [&](const Tensor& x) { return weighted(add(x, b)); },
        [&](const Tensor& x) { return weighted(sub(b, x)); },
        [&](const Tensor& x) { return weighted(mul(x, b)); },
        [&](const Tensor& x) { return weighted(scale(x, -1.7)); },
        [&](const Tensor& x) { return weighted(add_scalar(x, 0.3)); },
        [&](const Tensor& x) { return weighted(silu(x)); },
        [&](const Tensor& x) { return weighted(softplus(x)); },
        [&](const Tensor& x) { return weighted(activation(x, Activation::exp)); },
        [&](const Tensor& x) { return weighted(activation(x, Activation::cos)); },
        [&](const Tensor& x) { return sum(mul(matmul(x, mm), matmul(x, mm))); },
        [&](const Tensor& x) { return sum(mul(mean_axis(x, 1), mean_axis(x, 1))); },
        [&](const Tensor& x) { return sum(mul(swap_last2(x), swap_last2(w))); },
        [&](const Tensor& x) { return sum(mul(reshape(x, {6, 4}), reshape(w, {6, 4}))); },
        [&](const Tensor& x) { return sum(mul(slice_last(x, 1, 2), slice_last(x, 1, 2))); },
        [&](const Tensor& x) { return mul(mean(x), mean(x)); },
        [&](const Tensor& x) { return weighted(rbf_smooth(x, {0.8, 2})); },
        [&](const Tensor& x) { return sum(mul(rfft_features(x), rfft_features(w))); },
        [&](const Tensor& x) { return weighted(kernel_integral(x, SpectralFilter::identity(3))); },
    };
    for (const auto& f : cases) worst_op = std::max(worst_op, grad_check(f, a, 1e-5));
    // Scan-side ops on their own shapes.
    const Tensor delta = random({1, 6, 2}, 500 + seed, 0.1, 1.0);
    const Tensor amat = random({2, 3}, 600 + seed, -2.0, -0.2);
    const Tensor bproj = random({1, 6, 3}, 700 + seed);
    const Tensor xs = random({1, 6, 2}, 800 + seed);
    const Tensor cs = random({1, 6, 3}, 900 + seed);
    for (auto rule : {Discretization::zoh, Discretization::paper_eq4}) {
      worst_op = std::max(worst_op, grad_check([&](const Tensor& d) {
                            return sum(selective_scan(discretize(d, amat, bproj, rule), xs, cs));
                          }, delta, 1e-5));
      worst_op = std::max(worst_op, grad_check([&](const Tensor& aa) {
                            return sum(selective_scan(discretize(delta, aa, bproj, rule), xs, cs));
                          }, amat, 1e-5));
    }
    worst_op = std::max(worst_op, grad_check([&](const Tensor& xx) {
                          return sum(selective_scan(discretize(delta, amat, bproj, Discretization::zoh), xx, cs));
                        }, xs, 1e-5));
    const Tensor amp = random({2, 3}, 1000 + seed), sig = random({2, 3}, 1100 + seed, 0.0, 2.0);
    const Tensor om = random({2, 3}, 1200 + seed, -3, 3), ph = random({2, 3}, 1300 + seed, -3, 3);
    const Tensor wave_w = random({2, 5}, 1400 + seed);
    worst_op = std::max(worst_op, grad_check([&](const Tensor& s) {
                          return sum(mul(damped_cosine_sum(amp, s, om, ph, 5), wave_w));
                        }, sig, 1e-5));
  }
  const double secs = seconds_since(t0);
  report(1, worst_model <= 1e-4 && worst_op <= 1e-5 && secs < 60.0, "gradient integrity",
         "model max rel err " + fmt(worst_model) + " <= 1e-4, op max " + fmt(worst_op) + " <= 1e-5, " +
             fmt(secs) + " s < 60 s");
}

// 2 ------------------------------------------------------------------------

void spectral_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (std::size_t len = 1; len <= 64; ++len) {
    const Tensor x = random({len}, len);
    const auto fast = fft_forward(x);
    const std::size_t p = next_pow2(len);
    std::vector<double> padded(p, 0.0);
    std::copy(x.values().begin(), x.values().end(), padded.begin());
    const auto slow = dft_naive(ComplexTensor::from_real(Tensor({p}, padded)));
    for (std::size_t k = 0; k < p; ++k) worst = std::max(worst, std::abs(fast.at(k) - slow.at(k)));
  }
  const Tensor x = random({96}, 96);
  const auto spec = fft_forward(x);
  const Tensor back = ifft_inverse(spec, 96);
  double round = 0.0, time = 0.0, freq = 0.0;
  for (std::size_t i = 0; i < 96; ++i) round = std::max(round, std::abs(back[i] - x[i]));
  for (double v : x.values()) time += v * v;
  for (std::size_t k = 0; k < spec.length(); ++k) freq += std::norm(spec.at(k));
  const double parseval = std::abs(time - freq / static_cast<double>(spec.length()));
  const double secs = seconds_since(t0);
  report(2, worst <= 1e-9 && round <= 1e-10 && parseval <= 1e-9 && secs < 10.0, "spectral oracle",
         "fft vs naive " + fmt(worst) + " <= 1e-9, roundtrip " + fmt(round) + " <= 1e-10, Parseval " +
             fmt(parseval) + " <= 1e-9, " + fmt(secs) + " s");
}

// 3 ------------------------------------------------------------------------

// h_t = a_t * h_{t-1} + b_t * x_t, y_t = <h_t, c_t>, one lane at a time.
std::vector<double> naive_recurrence(const DiscreteSystem& sys, const Tensor& x, const Tensor& c) {
  const std::size_t B = x.dim(0), L = x.dim(1), V = x.dim(2), N = c.dim(2);
  std::vector<double> y(B * L * V, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v) {
      std::vector<double> h(N, 0.0);
      for (std::size_t t = 0; t < L; ++t) {
        double out = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t i = ((b * L + t) * V + v) * N + n;
          h[n] = sys.a_bar[i] * h[n] + sys.b_bar[i] * x[(b * L + t) * V + v];
          out += h[n] * c[(b * L + t) * N + n];
        }
        y[(b * L + t) * V + v] = out;
      }
    }
  return y;
}

void scan_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0, worst_chunk = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor delta = random({2, 16, 4}, 10 * seed + 1, 0.01, 1.0);
    const Tensor a = random({4, 8}, 10 * seed + 2, -3.0, -0.1);
    const Tensor bp = random({2, 16, 8}, 10 * seed + 3);
    const Tensor x = random({2, 16, 4}, 10 * seed + 4);
    const Tensor c = random({2, 16, 8}, 10 * seed + 5);
    const auto sys = discretize(delta, a, bp, Discretization::zoh);
    const auto ref = naive_recurrence(sys, x, c);
    const Tensor seq = selective_scan(sys, x, c, ScanMode::sequential);
    const Tensor chk = selective_scan(sys, x, c, ScanMode::chunked);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(seq[i] - ref[i]));
      worst_chunk = std::max(worst_chunk, std::abs(chk[i] - seq[i]));
    }
  }
  // Longer sequence so the chunked scan crosses several chunk boundaries.
  const auto sys = discretize(random({1, 200, 2}, 901, 0.01, 1.0), random({2, 8}, 902, -3.0, -0.1),
                              random({1, 200, 8}, 903), Discretization::zoh);
  const Tensor x = random({1, 200, 2}, 904), c = random({1, 200, 8}, 905);
  const Tensor seq = selective_scan(sys, x, c, ScanMode::sequential);
  const Tensor chk = selective_scan(sys, x, c, ScanMode::chunked);
  for (std::size_t i = 0; i < seq.numel(); ++i) worst_chunk = std::max(worst_chunk, std::abs(chk[i] - seq[i]));
  const double secs = seconds_since(t0);
  report(3, worst <= 1e-12 && worst_chunk <= 1e-12 && secs < 10.0, "scan oracle",
         "scan vs naive " + fmt(worst) + " <= 1e-12 over 20 seeds, chunked vs sequential " + fmt(worst_chunk) +
             " <= 1e-12, " + fmt(secs) + " s");
}

// 4 ------------------------------------------------------------------------

void discretization() {
  Rng rng(4);
  std::vector<double> d(10000), ones(10000, 1.0);
  std::vector<double> a(10000);
  for (auto& v : d) v = rng.uniform(1e-4, 2.0);
  for (auto& v : a) v = -rng.uniform(1e-3, 10.0);
  bool in_range = true;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto s = discretize(Tensor({1, 1, 1}, {d[i]}), Tensor({1, 1}, {a[i]}), Tensor({1, 1, 1}, {1.0}),
                              Discretization::zoh);
    if (!(s.a_bar[0] > 0.0 && s.a_bar[0] < 1.0)) in_range = false;
  }
  double first_order = 0.0;
  for (double an : {-0.5, -1.0, -5.0}) {
    const auto s = discretize(Tensor({1, 1, 1}, {1e-3}), Tensor({1, 1}, {an}), Tensor({1, 1, 1}, {1.0}),
                              Discretization::zoh);
    first_order = std::max(first_order, std::abs(s.a_bar[0] - (1.0 + 1e-3 * an)) / (1e-3 * 1e-3 * an * an));
  }
  const auto zoh = discretize(Tensor({1, 1, 1}, {0.1}), Tensor({1, 1}, {-1.0}), Tensor({1, 1, 1}, {1.0}),
                              Discretization::zoh);
  const double closed = (std::exp(-0.1) - 1.0) / -1.0;  // (dA)^-1 (e^{dA} - 1) d B
  const double zoh_err = std::abs(zoh.b_bar[0] - closed);
  report(4, in_range && first_order <= 1.0 && zoh_err <= 1e-12 && std::abs(zoh.b_bar[0] - 0.095162) < 1e-6,
         "discretization",
         std::string("0 < A_bar < 1 on 1e4 draws: ") + (in_range ? "yes" : "no") +
             ", |A_bar - (1 + dA)| / (dA)^2 = " + fmt(first_order) + " <= 1 at d = 1e-3, zoh B_bar " +
             fmt(zoh.b_bar[0]) + " err " + fmt(zoh_err) + " <= 1e-12");
}

// 5 ------------------------------------------------------------------------

double ilt_direct(const Tensor& y, const ILTHeadParams& ip, std::size_t b, std::size_t j, std::size_t c) {
  const std::size_t H = y.dim(1), D = y.dim(2), M = ip.modes();
  double pooled = 0.0;
  for (std::size_t t = 0; t < H; ++t) pooled += y[(b * H + t) * D + c];
  pooled /= static_cast<double>(H);
  auto raw = [&](std::size_t k) { return ip.proj_w[c * 4 * M + k] * pooled + ip.proj_b[c * 4 * M + k]; };
  const double t = static_cast<double>(j) / static_cast<double>(H);
  double out = y[(b * H + j) * D + c];
  for (std::size_t n = 0; n < M; ++n) {
    const double sigma = std::log1p(std::exp(raw(M + n)));
    out += raw(n) * std::exp(-sigma * t) * std::cos(raw(2 * M + n) * t + raw(3 * M + n));
  }
  return out;
}

void ilt_head() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ILTHeadParams ip{random({3, 16}, 20 + seed, -2, 2), random({3, 16}, 30 + seed, -2, 2)};
    const Tensor y = random({2, 12, 3}, 40 + seed);
    const Tensor out = ilt_head_forward(y, ip);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t j = 0; j < 12; ++j)
        for (std::size_t c = 0; c < 3; ++c)
          worst = std::max(worst, std::abs(out[(b * 12 + j) * 3 + c] - ilt_direct(y, ip, b, j, c)));
  }
  const Tensor amp({1, 3}, {0.5, -1.25, 2.0}), zero = Tensor::zeros({1, 3});
  const Tensor flat = damped_cosine_sum(amp, zero, zero, zero, 10);
  bool exact = true;
  for (double v : flat.values()) exact = exact && v == 0.5 + -1.25 + 2.0;
  report(5, worst <= 1e-12 && exact, "ILT head",
         "direct evaluation max err " + fmt(worst) + " <= 1e-12, degenerate modes exact: " + (exact ? "yes" : "no"));
}

// 6 and 7 --------------------------------------------------------------------

void synthetic_experiments() {
  const std::string path = FLDM_CONFIG_DIR "/synthetic_desk.cfg";
  TrainConfig base = load_train_config(path);
  base.out_dir.clear();
  const SeriesDataset ds = load_dataset(base);
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const std::vector<double> levels{0.10, 0.15};
  const std::size_t noise_draws = 8;

  std::vector<double> full_val, fm_val, ilt_val;
  std::vector<std::vector<double>> full_deg(levels.size()), rbf_deg(levels.size());
  double slowest = 0.0;
  auto run = [&](const std::string& code, std::uint64_t seed) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    if (code != "full") cfg.model = apply_ablation(base.model, code);
    const auto t0 = Clock::now();
    TrainResult r = train_loop(cfg, ds);
    const double secs = seconds_since(t0);
    slowest = std::max(slowest, secs);
    std::cout << "  " << ablation_label(code) << " seed " << seed << ": val mse " << fmt(r.report.val.mse)
              << ", test mse " << fmt(r.report.test.mse) << ", best epoch " << r.report.best_epoch << ", "
              << fmt(secs) << " s" << std::endl;
    return r;
  };
  auto degradations = [&](const TrainResult& r, std::uint64_t seed, std::vector<std::vector<double>>& out) {
    const auto n = noisy_test_mse(r.model, ds, levels, seed, base.data.eval_stride, noise_draws);
    for (std::size_t i = 0; i < levels.size(); ++i) out[i].push_back(n.noisy[i] - n.clean);
  };

  for (std::uint64_t seed : seeds) {
    const TrainResult full = run("full", seed);
    full_val.push_back(full.report.val.mse);
    degradations(full, seed, full_deg);
    fm_val.push_back(run("fm", seed).report.val.mse);
    ilt_val.push_back(run("ilt", seed).report.val.mse);
    degradations(run("rbf", seed), seed, rbf_deg);
  }

  const double mf = median(full_val), mfm = median(fm_val), milt = median(ilt_val);
  report(6, mf < mfm && mf < milt && slowest <= 600.0, "ablation direction on synthetic data",
         "median val mse full " + fmt(mf) + " < w/o FM " + fmt(mfm) + " and < w/o ILT " + fmt(milt) +
             ", slowest run " + fmt(slowest) + " s <= 600 s");

  bool robust = true;
  std::string detail;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double f = median(full_deg[i]), r = median(rbf_deg[i]);
    robust = robust && f <= r;
    detail += (i ? ", " : "") + std::string("level ") + fmt(levels[i]) + ": full " + fmt(f) + " <= w/o RBF " + fmt(r);
  }
  report(7, robust, "noise robustness (median over 3 seeds of test mse degradation, mean of 8 noise draws)", detail);
}

// 8 ------------------------------------------------------------------------

void complexity() {
  const auto pts = bench_scaling({256, 512}, 8, 8, 16, 20);
  const double ratio = pts[1].median_seconds / pts[0].median_seconds;
  report(8, ratio <= 2.6, "forward cost scaling",
         "median forward L=256 " + fmt(pts[0].median_seconds) + " s, L=512 " + fmt(pts[1].median_seconds) +
             " s, ratio " + fmt(ratio) + " <= 2.6");
}

// 9 ------------------------------------------------------------------------

void etth1_smoke() {
  const std::string csv = FLDM_ETTH1_CSV;
  if (!std::filesystem::exists(csv)) {
    report(9, false, "ETTh1 smoke test", "dataset not found at " + csv);
    return;
  }
  TrainConfig cfg = load_train_config(FLDM_CONFIG_DIR "/etth1_desk.cfg");
  cfg.data.csv = csv;
  cfg.out_dir.clear();
  const auto t0 = Clock::now();
  const SeriesDataset ds = load_dataset(cfg);
  const TrainResult r = train_loop(cfg, ds);
  const double secs = seconds_since(t0);
  const bool shape_ok = cfg.model.channels() == ds.variates() && cfg.model.state_dim == 16 &&
                        cfg.model.blocks == 2 && cfg.epochs <= 20 && cfg.model.lookback == 96 &&
                        cfg.model.horizon == 96;
  report(9, shape_ok && r.report.test.mse <= 1.0 && secs <= 900.0, "ETTh1 smoke test",
         "test mse " + fmt(r.report.test.mse) + " <= 1.0, " + fmt(secs) + " s <= 900 s, desk config " +
             (shape_ok ? "as required" : "out of bounds"));
}

// 10 -----------------------------------------------------------------------

void determinism() {
  std::vector<double> v(600 * 2);
  for (std::size_t t = 0; t < 600; ++t) {
    v[t * 2] = std::sin(0.3 * static_cast<double>(t)) + 0.002 * static_cast<double>(t);
    v[t * 2 + 1] = std::cos(0.11 * static_cast<double>(t));
  }
  SeriesDataset raw;
  raw.name = "toy";
  raw.columns = {"a", "b"};
  raw.values = Tensor({600, 2}, v);
  assign_splits(raw, SplitProtocol::ratio);
  const SeriesDataset ds = normalize(raw);

  TrainConfig cfg;
  cfg.adam.lr = 1e-2;
  cfg.batch = 16;
  cfg.epochs = 3;
  cfg.max_batches = 5;
  cfg.seed = 42;
  cfg.model.lookback = 16;
  cfg.model.horizon = 4;
  cfg.model.state_dim = 4;
  cfg.model.ilt_modes = 2;
  cfg.model.random_filter_init = true;
  const auto a = train_loop(cfg, ds);
  const auto b = train_loop(cfg, ds);
  const bool reports_equal = a.report.deterministic_json().dump() == b.report.deterministic_json().dump();

  const auto dir = std::filesystem::temp_directory_path() / "fldm_acceptance";
  std::filesystem::create_directories(dir);
  const auto first = (dir / "first.ckpt").string(), second = (dir / "second.ckpt").string();
  save_model(first, a.model);
  const LoadedModel loaded = load_model(first);
  save_model(second, loaded.model);
  auto bytes = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool files_equal = bytes(first) == bytes(second);
  bool params_equal = true;
  const auto pa = a.model.parameters(), pl = loaded.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t j = 0; j < pa[i].second.numel(); ++j)
      params_equal = params_equal && std::bit_cast<std::uint64_t>(pa[i].second[j]) ==
                                         std::bit_cast<std::uint64_t>(pl[i].second[j]);
  const Tensor x = random({2, 16, 2}, 5);
  const Tensor ya = forward_inference(a.model, x), yl = forward_inference(loaded.model, x);
  bool outputs_equal = true;
  for (std::size_t i = 0; i < ya.numel(); ++i) outputs_equal = outputs_equal && ya[i] == yl[i];
  std::filesystem::remove_all(dir);
  report(10, reports_equal && files_equal && params_equal && outputs_equal, "determinism and serialization",
         std::string("reports bitwise equal: ") + (reports_equal ? "yes" : "no") +
             ", checkpoint bytes equal: " + (files_equal ? "yes" : "no") +
             ", parameters bit-exact: " + (params_equal ? "yes" : "no") +
             ", outputs equal: " + (outputs_equal ? "yes" : "no"));
}

}  // namespace

int main() {
  guarded(1, "gradient integrity", gradient_integrity);
  guarded(2, "spectral oracle", spectral_oracle);
  guarded(3, "scan oracle", scan_oracle);
  guarded(4, "discretization", discretization);
  guarded(5, "ILT head", ilt_head);
  try {
    synthetic_experiments();
  } catch (const std::exception& e) {
    report(6, false, "ablation direction on synthetic data", std::string("exception: ") + e.what());
    report(7, false, "noise robustness", std::string("exception: ") + e.what());
  }
  guarded(8, "forward cost scaling", complexity);
  guarded(9, "ETTh1 smoke test", etth1_smoke);
  guarded(10, "determinism and serialization", determinism);
  std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criterion/criteria failed"
                         : std::string("acceptance: all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
