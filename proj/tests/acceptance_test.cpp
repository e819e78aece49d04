// Acceptance gate: twelve end-to-end checks, one pass/fail line each, every
// tolerance pinned in code next to its check. Each criterion is self-contained
// and verifies the library against an independent oracle (explicit sums,
// brute-force search, double-precision replicas, arithmetic recounts) or a
// pinned external reference, never against the code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "facegcd/experiment.hpp"
#include "facegcd/loss.hpp"
#include "facegcd/model.hpp"

using namespace facegcd;
namespace ag = facegcd::ag;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  std::string label;
  bool pass = false;
  std::string detail;
};

std::vector<Criterion> g_results;

void record(int id, const std::string& label, bool pass, const std::string& detail) {
  g_results.push_back({id, label, pass, detail});
  std::printf("[%2d] %s  %s: %s\n", id, pass ? "PASS" : "FAIL", label.c_str(), detail.c_str());
  std::fflush(stdout);
}

template <typename F>
void run_criterion(int id, const std::string& label, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    record(id, label, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

Tensor random_images(int B, const EncoderConfig& cfg, Rng& rng) {
  return Tensor::rand_uniform({B, cfg.channels, cfg.image_side, cfg.image_side}, rng, 0.0f, 1.0f);
}

double rel_err(double got, double want) {
  return std::fabs(got - want) / std::max({std::fabs(got), std::fabs(want), 1e-12});
}

// ---------------------------------------------------------------------------
// 1. Prefix no-op identity
// ---------------------------------------------------------------------------

void criterion_1() {
  const float TOL = 1e-6f;  // max abs difference, m=0 vs vanilla forward
  ModelConfig cfg;
  cfg.variant = Variant::facegcd;
  cfg.prefix_len = 0;
  cfg.seed = 901;
  FaceGCDModel with_machinery(cfg);
  ModelConfig plain_cfg = cfg;
  plain_cfg.variant = Variant::no_prefix;
  FaceGCDModel plain(plain_cfg);

  Rng rng = make_rng(901, "accept-noop");
  float worst = 0.0f;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor img = random_images(1, cfg.encoder, rng);
    const Tensor a = with_machinery.embed_batch(img).val();
    const Tensor b = plain.embed_batch(img).val();
    for (std::int64_t t = 0; t < a.numel(); ++t)
      worst = std::max(worst, std::fabs(a[t] - b[t]));
  }
  record(1, "prefix no-op identity", worst <= TOL,
         fmt("max |m=0 - vanilla| = %.2e over 50 inputs (tol %.0e)", worst, TOL));
}

// ---------------------------------------------------------------------------
// 2. Zero hypernetwork => zero prefixes
// ---------------------------------------------------------------------------

void criterion_2() {
  ModelConfig cfg;
  cfg.variant = Variant::facegcd;
  cfg.seed = 902;
  FaceGCDModel model(cfg);
  Rng rng = make_rng(902, "accept-zero");
  Tensor imgs = random_images(3, cfg.encoder, rng);

  PrefixSet before = model.make_prefixes(imgs);
  bool live_before = false;
  for (int l = 0; l < before.layers(); ++l)
    if (before.key[static_cast<size_t>(l)].val().max_abs() > 0.0f) live_before = true;

  ParamStore& ps = model.params();
  for (size_t i = 0; i < ps.size(); ++i)
    if (ps.name_at(i).rfind("hyper.", 0) == 0)
      for (float& x : ps.at(i).val().vec()) x = 0.0f;

  PrefixSet pfx = model.make_prefixes(imgs);
  std::int64_t nonzero = 0, total = 0;
  for (int l = 0; l < pfx.layers(); ++l) {
    for (float x : pfx.key[static_cast<size_t>(l)].val().vec()) {
      ++total;
      if (x != 0.0f) ++nonzero;
    }
    for (float x : pfx.value[static_cast<size_t>(l)].val().vec()) {
      ++total;
      if (x != 0.0f) ++nonzero;
    }
  }
  record(2, "zero hypernet => zero prefixes",
         live_before && pfx.layers() == cfg.encoder.num_layers && nonzero == 0,
         fmt("%lld/%lld elements exactly zero after zeroing (live before: %s)",
             (long long)(total - nonzero), (long long)total, live_before ? "yes" : "no"));
}

// ---------------------------------------------------------------------------
// 3. Gradient partition
// ---------------------------------------------------------------------------

void criterion_3() {
  ModelConfig cfg;
  cfg.variant = Variant::facegcd;
  cfg.seed = 903;
  FaceGCDModel model(cfg);
  ParamStore& ps = model.params();

  std::vector<Tensor> snapshot;
  for (size_t i = 0; i < ps.size(); ++i) snapshot.push_back(ps.at(i).val());

  Rng rng = make_rng(903, "accept-partition");
  Tensor imgs = random_images(8, cfg.encoder, rng);
  std::vector<int> labels = {0, 1, -1, 0, 0, 1, -1, 0};
  LossConfig lc;
  lc.temperature = 0.1f;
  LossBreakdown lb = total_loss(model.embed_batch(imgs), labels, lc);
  ag::backward(lb.total);
  SgdMomentum opt(0.9f, 1e-4f);
  opt.step(ps, 0.05f);

  const std::string final_blk = "backbone.blk" + std::to_string(cfg.encoder.num_layers - 1) + ".";
  int frozen_moved = 0, hyper_moved = 0, final_moved = 0, head_moved = 0;
  for (size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name_at(i);
    bool moved = false;
    const Tensor& now = ps.at(i).val();
    for (std::int64_t t = 0; t < now.numel(); ++t)
      if (now[t] != snapshot[i][t]) {
        moved = true;
        break;
      }
    if (!ps.at(i).requires_grad()) {
      if (moved) ++frozen_moved;  // frozen params must hold bit-exactly
    } else if (moved) {
      if (name.rfind("hyper.", 0) == 0) ++hyper_moved;
      if (name.rfind(final_blk, 0) == 0) ++final_moved;
      if (name.rfind("head.", 0) == 0) ++head_moved;
    }
  }
  record(3, "gradient partition", frozen_moved == 0 && hyper_moved > 0 && final_moved > 0 && head_moved > 0,
         fmt("frozen moved: %d (must be 0); moved hypernet %d, final block %d, head %d params",
             frozen_moved, hyper_moved, final_moved, head_moved));
}

// ---------------------------------------------------------------------------
// 4. Loss oracle
// ---------------------------------------------------------------------------

namespace oracle {

double dot_rows(const Tensor& z, int i, int j) {
  double acc = 0.0;
  for (int c = 0; c < z.dim(1); ++c)
    acc += static_cast<double>(z.at({i, c})) * static_cast<double>(z.at({j, c}));
  return acc;
}

double unsup(const Tensor& z, double tau) {
  const int n = z.dim(0), b = n / 2;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(dot_rows(z, i, k) / tau);
    total += -std::log(std::exp(dot_rows(z, i, (i + b) % n) / tau) / denom);
  }
  return total / n;
}

double sup(const Tensor& z, const std::vector<int>& labels, double tau) {
  const int n = z.dim(0);
  double total = 0.0;
  int contributing = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0) continue;
    std::vector<int> pos;
    for (int p = 0; p < n; ++p)
      if (p != i && labels[static_cast<size_t>(p)] == labels[static_cast<size_t>(i)]) pos.push_back(p);
    if (pos.empty()) continue;
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(dot_rows(z, i, k) / tau);
    double anchor = 0.0;
    for (int p : pos) anchor += -std::log(std::exp(dot_rows(z, i, p) / tau) / denom);
    total += anchor / static_cast<double>(pos.size());
    ++contributing;
  }
  return contributing == 0 ? 0.0 : total / contributing;
}

}  // namespace oracle

void criterion_4() {
  const double TOL = 1e-6;  // relative error against explicit O(n^2) sums
  Rng rng = make_rng(904, "accept-loss");
  std::uniform_int_distribution<int> bdist(1, 8);  // 2b <= 16 rows
  std::uniform_real_distribution<float> tdist(0.2f, 2.0f);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 2);

  double worst = 0.0;
  int checks = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int b = bdist(rng), e = 4 + trial % 6;
    const float tau = tdist(rng);
    Tensor z = Tensor::randn({2 * b, e}, rng);
    for (int i = 0; i < 2 * b; ++i) {
      float sq = 1e-12f;
      for (int c = 0; c < e; ++c) sq += z.at({i, c}) * z.at({i, c});
      const float inv = 1.0f / std::sqrt(sq);
      for (int c = 0; c < e; ++c) z.at({i, c}) *= inv;
    }
    std::vector<int> labels(static_cast<size_t>(2 * b), -1);
    for (int i = 0; i < b; ++i)
      if (u(rng) < 0.6) {
        const int c = cls(rng);
        labels[static_cast<size_t>(i)] = c;
        labels[static_cast<size_t>(i + b)] = c;
      }

    const double want_u = oracle::unsup(z, tau);
    const double got_u = unsupervised_contrastive(ag::Var::leaf(z), tau).val()[0];
    worst = std::max(worst, rel_err(got_u, want_u));
    const double want_s = oracle::sup(z, labels, tau);
    const double got_s = supervised_contrastive(ag::Var::leaf(z), labels, tau).val()[0];
    if (want_s != 0.0 || got_s != 0.0) worst = std::max(worst, rel_err(got_s, want_s));
    for (float lambda : {0.0f, 0.35f, 1.0f}) {
      LossConfig lc;
      lc.temperature = tau;
      lc.lambda = lambda;
      const double got_t = total_loss(ag::Var::leaf(z), labels, lc).total_value();
      const double want_t = (1.0 - lambda) * want_u + lambda * want_s;
      worst = std::max(worst, rel_err(got_t, want_t));
      ++checks;
    }
    checks += 2;
  }
  record(4, "loss oracle", worst <= TOL,
         fmt("max rel err %.2e over %d checks, 100 batches (tol %.0e)", worst, checks, TOL));
}

// ---------------------------------------------------------------------------
// 5. Gradient correctness (hypernetwork path)
// ---------------------------------------------------------------------------

// Independent double-precision replica of the hypernet + generator forward.
// Static-encoder features are constants with respect to the probed weights,
// so they enter as fixed inputs; everything downstream is recomputed in
// double so the pinned 1e-4 central difference is not drowned by f32 rounding.
namespace replica {

using dvec = std::vector<double>;

dvec to_d(const Tensor& t) {
  dvec v(static_cast<size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) v[static_cast<size_t>(i)] = t[i];
  return v;
}

struct Hyper {
  int L, d, hid, b, dh, m, heads, B;
  std::vector<dvec> trunk_w, trunk_b, pooled, sign_k, sign_v;
  dvec kdw, kdb, kuw, kub, vdw, vdb, vuw, vub, p_init;

  double forward() const {
    double f = 0.0;
    for (int l = 0; l < L; ++l) {
      dvec h(static_cast<size_t>(B) * hid);
      for (int i = 0; i < B; ++i)
        for (int c = 0; c < hid; ++c) {
          double acc = trunk_b[static_cast<size_t>(l)][static_cast<size_t>(c)];
          for (int a = 0; a < d; ++a)
            acc += pooled[static_cast<size_t>(l)][static_cast<size_t>(i) * d + a] *
                   trunk_w[static_cast<size_t>(l)][static_cast<size_t>(a) * hid + c];
          h[static_cast<size_t>(i) * hid + c] = acc > 0.0 ? acc : 0.0;
        }
      auto head = [&](const dvec& w, const dvec& bias, int out_dim) {
        dvec o(static_cast<size_t>(B) * out_dim);
        for (int i = 0; i < B; ++i)
          for (int c = 0; c < out_dim; ++c) {
            double acc = bias[static_cast<size_t>(c)];
            for (int a = 0; a < hid; ++a)
              acc += h[static_cast<size_t>(i) * hid + a] * w[static_cast<size_t>(a) * out_dim + c];
            o[static_cast<size_t>(i) * out_dim + c] = acc;
          }
        return o;
      };
      const dvec gkd = head(kdw, kdb, b * dh), gku = head(kuw, kub, dh * b);
      const dvec gvd = head(vdw, vdb, b * dh), gvu = head(vuw, vub, dh * b);
      auto path = [&](const dvec& gd, const dvec& gu, const dvec& sign) {
        double acc_f = 0.0;
        for (int i = 0; i < B; ++i) {
          dvec db(static_cast<size_t>(b)), ub(static_cast<size_t>(dh));
          for (int r = 0; r < b; ++r) {
            double s = 0.0;
            for (int c = 0; c < dh; ++c) s += gd[(static_cast<size_t>(i) * b + r) * dh + c];
            db[static_cast<size_t>(r)] = s / dh;
          }
          for (int r = 0; r < dh; ++r) {
            double s = 0.0;
            for (int c = 0; c < b; ++c) s += gu[(static_cast<size_t>(i) * dh + r) * b + c];
            ub[static_cast<size_t>(r)] = s / b;
          }
          for (int mm = 0; mm < m; ++mm)
            for (int hh = 0; hh < heads; ++hh) {
              dvec x(static_cast<size_t>(b));
              for (int r = 0; r < b; ++r) {
                double acc = db[static_cast<size_t>(r)];
                for (int c = 0; c < dh; ++c)
                  acc += gd[(static_cast<size_t>(i) * b + r) * dh + c] *
                         p_init[(static_cast<size_t>(mm) * heads + hh) * dh + c];
                x[static_cast<size_t>(r)] = acc > 0.0 ? acc : 0.0;
              }
              for (int c = 0; c < dh; ++c) {
                double acc = ub[static_cast<size_t>(c)];
                for (int r = 0; r < b; ++r)
                  acc += gu[(static_cast<size_t>(i) * dh + c) * b + r] * x[static_cast<size_t>(r)];
                const std::int64_t oi =
                    ((static_cast<std::int64_t>(i) * m + mm) * heads + hh) * dh + c;
                acc_f += sign[static_cast<size_t>(oi)] * acc;
              }
            }
        }
        return acc_f;
      };
      f += path(gkd, gku, sign_k[static_cast<size_t>(l)]) +
           path(gvd, gvu, sign_v[static_cast<size_t>(l)]);
    }
    return f;
  }
};

}  // namespace replica

void criterion_5() {
  const double H = 1e-4;    // pinned central-difference step
  const double TOL = 1e-3;  // relative error, analytic vs finite difference
  ModelConfig cfg;
  cfg.variant = Variant::facegcd;
  cfg.seed = 905;
  FaceGCDModel model(cfg);
  ParamStore& ps = model.params();
  const EncoderConfig& enc = cfg.encoder;
  const int B = 4, L = enc.num_layers, m = cfg.prefix_len;

  Rng rng = make_rng(905, "accept-fd");
  Tensor imgs = random_images(B, enc, rng);

  std::vector<Tensor> sk, sv;
  std::bernoulli_distribution coin(0.5);
  for (int l = 0; l < L; ++l) {
    Tensor a({B, m, enc.num_heads, enc.head_dim()});
    Tensor b({B, m, enc.num_heads, enc.head_dim()});
    for (std::int64_t t = 0; t < a.numel(); ++t) a[t] = coin(rng) ? 1.0f : -1.0f;
    for (std::int64_t t = 0; t < b.numel(); ++t) b[t] = coin(rng) ? 1.0f : -1.0f;
    sk.push_back(a);
    sv.push_back(b);
  }

  // analytic gradients of the +-1-weighted prefix sum
  PrefixSet pfx = model.make_prefixes(imgs);
  ag::Var f;
  for (int l = 0; l < L; ++l) {
    const size_t i = static_cast<size_t>(l);
    const float n = static_cast<float>(pfx.key[i].val().numel());
    ag::Var term = ag::add(ag::scale(ag::mean_all(ag::mul(pfx.key[i], ag::Var::constant(sk[i]))), n),
                           ag::scale(ag::mean_all(ag::mul(pfx.value[i], ag::Var::constant(sv[i]))), n));
    f = l == 0 ? term : ag::add(f, term);
  }
  ag::backward(f);

  replica::Hyper rep;
  rep.L = L;
  rep.d = enc.embed_dim;
  rep.hid = cfg.hypernet.hidden_dim;
  rep.b = cfg.hypernet.bottleneck;
  rep.dh = enc.head_dim();
  rep.m = m;
  rep.heads = enc.num_heads;
  rep.B = B;
  for (int l = 0; l < L; ++l) {
    rep.trunk_w.push_back(replica::to_d(ps.get("hyper.trunk" + std::to_string(l) + "_w").val()));
    rep.trunk_b.push_back(replica::to_d(ps.get("hyper.trunk" + std::to_string(l) + "_b").val()));
    rep.sign_k.push_back(replica::to_d(sk[static_cast<size_t>(l)]));
    rep.sign_v.push_back(replica::to_d(sv[static_cast<size_t>(l)]));
  }
  rep.kdw = replica::to_d(ps.get("hyper.head_kdown_w").val());
  rep.kdb = replica::to_d(ps.get("hyper.head_kdown_b").val());
  rep.kuw = replica::to_d(ps.get("hyper.head_kup_w").val());
  rep.kub = replica::to_d(ps.get("hyper.head_kup_b").val());
  rep.vdw = replica::to_d(ps.get("hyper.head_vdown_w").val());
  rep.vdb = replica::to_d(ps.get("hyper.head_vdown_b").val());
  rep.vuw = replica::to_d(ps.get("hyper.head_vup_w").val());
  rep.vub = replica::to_d(ps.get("hyper.head_vup_b").val());
  rep.p_init = replica::to_d(ps.get("gen.p_init").val());
  std::vector<ag::Var> feats = model.static_features(imgs);
  for (int l = 0; l < L; ++l) {
    const Tensor& z = feats[static_cast<size_t>(l)].val();
    replica::dvec pooled(static_cast<size_t>(B) * enc.embed_dim, 0.0);
    for (int i = 0; i < B; ++i)
      for (int t = 0; t < enc.token_count(); ++t)
        for (int c = 0; c < enc.embed_dim; ++c)
          pooled[static_cast<size_t>(i) * enc.embed_dim + c] +=
              static_cast<double>(z.at({i, t, c})) / enc.token_count();
    rep.pooled.push_back(std::move(pooled));
  }
  const double forward_gap = std::fabs(rep.forward() - static_cast<double>(f.val()[0]));

  // three probe parameters on the hypernetwork path, largest-|grad| element each
  struct Probe {
    std::string name;
    replica::dvec* slot;
  };
  Probe probes[3] = {{"hyper.trunk0_w", &rep.trunk_w[0]},
                     {"hyper.head_kdown_w", &rep.kdw},
                     {"hyper.head_vup_w", &rep.vuw}};
  double worst = 0.0;
  for (const Probe& p : probes) {
    ag::Var v = ps.get(p.name);
    std::int64_t idx = 0;
    for (std::int64_t t = 1; t < v.grad().numel(); ++t)
      if (std::fabs(v.grad()[t]) > std::fabs(v.grad()[idx])) idx = t;
    const double an = v.grad()[idx];
    const double orig = (*p.slot)[static_cast<size_t>(idx)];
    (*p.slot)[static_cast<size_t>(idx)] = orig + H;
    const double fp = rep.forward();
    (*p.slot)[static_cast<size_t>(idx)] = orig - H;
    const double fm = rep.forward();
    (*p.slot)[static_cast<size_t>(idx)] = orig;
    worst = std::max(worst, rel_err((fp - fm) / (2.0 * H), an));
  }
  record(5, "hypernet-path gradients vs finite differences", worst <= TOL && forward_gap < 1e-4,
         fmt("max rel err %.2e on 3 probes, step %.0e (tol %.0e); replica forward gap %.1e", worst,
             H, TOL, forward_gap));
}

// ---------------------------------------------------------------------------
// 6. Hungarian oracle
// ---------------------------------------------------------------------------

double brute_force_acc(const std::vector<int>& pred, const std::vector<int>& truth) {
  auto dense = [](const std::vector<int>& ids) {
    std::vector<int> s = ids;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  };
  const std::vector<int> cs = dense(pred), ks = dense(truth);
  const int nc = static_cast<int>(cs.size()), nk = static_cast<int>(ks.size());
  const int n = std::max(nc, nk);
  std::vector<std::vector<int>> cont(static_cast<size_t>(nc),
                                     std::vector<int>(static_cast<size_t>(nk), 0));
  for (size_t r = 0; r < pred.size(); ++r) {
    const int c = static_cast<int>(std::lower_bound(cs.begin(), cs.end(), pred[r]) - cs.begin());
    const int k = static_cast<int>(std::lower_bound(ks.begin(), ks.end(), truth[r]) - ks.begin());
    ++cont[static_cast<size_t>(c)][static_cast<size_t>(k)];
  }
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  int best = 0;
  do {
    int s = 0;
    for (int i = 0; i < n; ++i)
      if (i < nc && perm[static_cast<size_t>(i)] < nk)
        s += cont[static_cast<size_t>(i)][static_cast<size_t>(perm[static_cast<size_t>(i)])];
    best = std::max(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return 100.0 * best / static_cast<double>(pred.size());
}

void criterion_6() {
  const double TOL = 1e-9;  // both sides compute 100*matched/n
  Rng rng = make_rng(906, "accept-hungarian");
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> ndist(1, 60), kdist(1, 8);
    const int n = ndist(rng), nk = kdist(rng), nc = kdist(rng);
    std::vector<int> pred(static_cast<size_t>(n)), truth(static_cast<size_t>(n));
    std::uniform_int_distribution<int> cd(0, nc - 1), kd(0, nk - 1);
    for (int i = 0; i < n; ++i) {
      pred[static_cast<size_t>(i)] = cd(rng);
      truth[static_cast<size_t>(i)] = kd(rng);
    }
    worst = std::max(worst, std::fabs(hungarian_acc_all(pred, truth) - brute_force_acc(pred, truth)));
  }

  int invariance_fails = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<int> ndist(2, 40), kdist(2, 6);
    const int n = ndist(rng), nk = kdist(rng), nc = kdist(rng);
    std::vector<int> pred(static_cast<size_t>(n)), truth(static_cast<size_t>(n));
    std::uniform_int_distribution<int> cd(0, nc - 1), kd(0, nk - 1);
    for (int i = 0; i < n; ++i) {
      pred[static_cast<size_t>(i)] = cd(rng);
      truth[static_cast<size_t>(i)] = kd(rng);
    }
    const double base = hungarian_acc_all(pred, truth);
    // relabel clusters by a random permutation and shuffle row order
    std::vector<int> relabel(static_cast<size_t>(nc));
    std::iota(relabel.begin(), relabel.end(), 0);
    std::shuffle(relabel.begin(), relabel.end(), rng);
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> pred2, truth2;
    for (int r : order) {
      pred2.push_back(relabel[static_cast<size_t>(pred[static_cast<size_t>(r)])]);
      truth2.push_back(truth[static_cast<size_t>(r)]);
    }
    if (std::fabs(hungarian_acc_all(pred2, truth2) - base) > TOL) ++invariance_fails;
  }
  record(6, "hungarian accuracy oracle", worst <= TOL && invariance_fails == 0,
         fmt("max |acc - brute force| = %.1e over 200 fuzz; %d/500 invariance violations", worst,
             invariance_fails));
}

// ---------------------------------------------------------------------------
// 7. SSK properties
// ---------------------------------------------------------------------------

void criterion_7() {
  Rng rng = make_rng(907, "accept-ssk");
  int preservation_fails = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> ndist(8, 80), edist(2, 6);
    const int n = ndist(rng), e = edist(rng);
    std::uniform_int_distribution<int> kdist(2, std::min(6, n));
    const int k = kdist(rng);
    Tensor x = Tensor::randn({n, e}, rng);
    std::uniform_int_distribution<int> label_of(0, k - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> labels(static_cast<size_t>(n), -1);
    for (int i = 0; i < n; ++i)
      if (u(rng) < 0.3) labels[static_cast<size_t>(i)] = label_of(rng);
    ClusterConfig cc;
    cc.n_init = 2;
    cc.max_iter = 100;
    cc.seed = 9000 + static_cast<std::uint64_t>(trial);
    Assignment a = ssk_cluster(x, labels, k, cc);
    for (int i = 0; i < n; ++i) {
      const int lab = labels[static_cast<size_t>(i)];
      if (lab < 0) continue;
      auto it = a.anchor_of_class.find(lab);
      if (it == a.anchor_of_class.end() || a.cluster_of[static_cast<size_t>(i)] != it->second)
        ++preservation_fails;
    }
  }

  int equivalence_fails = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 40, e = 4, k = 3;
    Tensor x = Tensor::randn({n, e}, rng);
    ClusterConfig cc;
    cc.n_init = 3;
    cc.seed = 9100 + static_cast<std::uint64_t>(trial);
    Assignment ssk = ssk_cluster(x, std::vector<int>(n, -1), k, cc);
    Assignment km = kmeans_cluster(x, k, cc);
    if (ssk.cluster_of != km.cluster_of) ++equivalence_fails;
  }

  int monotone_fails = 0;
  const double MONO_TOL = 1e-9;  // WCSS may not rise between iterations
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 60, e = 3, k = 4;
    Tensor x = Tensor::randn({n, e}, rng);
    ClusterConfig cc;
    cc.n_init = 1;
    cc.seed = 9200 + static_cast<std::uint64_t>(trial);
    Assignment a = kmeans_cluster(x, k, cc);
    for (size_t t = 1; t < a.wcss_trace.size(); ++t)
      if (a.wcss_trace[t] > a.wcss_trace[t - 1] + MONO_TOL) ++monotone_fails;
  }
  record(7, "ssk properties", preservation_fails == 0 && equivalence_fails == 0 && monotone_fails == 0,
         fmt("labeled-row violations %d/100 runs; ssk!=kmeans %d/20; wcss increases %d/50",
             preservation_fails, equivalence_fails, monotone_fails));
}

// ---------------------------------------------------------------------------
// 8. NNC oracle
// ---------------------------------------------------------------------------

double nnc_oracle(const Tensor& x, const std::vector<int>& labels, int k) {
  const int n = x.dim(0), e = x.dim(1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    std::vector<std::pair<double, int>> d;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double acc = 0.0;
      for (int c = 0; c < e; ++c) {
        const double diff = static_cast<double>(x.at({i, c})) - static_cast<double>(x.at({j, c}));
        acc += diff * diff;
      }
      d.push_back({acc, j});
    }
    std::sort(d.begin(), d.end());
    int same = 0;
    for (int t = 0; t < k; ++t)
      if (labels[static_cast<size_t>(d[static_cast<size_t>(t)].second)] ==
          labels[static_cast<size_t>(i)])
        ++same;
    total += static_cast<double>(same) / k;
  }
  return 100.0 * total / n;
}

void criterion_8() {
  const double TOL = 1e-9;
  Rng rng = make_rng(908, "accept-nnc");
  const int n = 500, e = 8;
  Tensor x = Tensor::randn({n, e}, rng);
  std::uniform_int_distribution<int> cls(0, 11);
  std::vector<int> labels(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<size_t>(i)] = cls(rng);
  double worst = 0.0;
  for (int k : {1, 5, 10})
    worst = std::max(worst, std::fabs(nnc(x, labels, k) - nnc_oracle(x, labels, k)));
  record(8, "nnc oracle", worst <= TOL,
         fmt("max |nnc - O(N^2) oracle| = %.1e at N=500, k in {1,5,10}", worst));
}

// ---------------------------------------------------------------------------
// 9. Split arithmetic
// ---------------------------------------------------------------------------

void criterion_9() {
  Rng rng = make_rng(909, "accept-split");
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<int> iddist(4, 24);
    const int num_ids = iddist(rng);
    std::uniform_int_distribution<int> cnt(10, 120);
    std::vector<ManifestEntry> manifest;
    std::map<int, int> per_id;
    for (int cid = 0; cid < num_ids; ++cid) {
      const int n = cnt(rng);
      per_id[cid] = n;
      for (int j = 0; j < n; ++j)
        manifest.push_back({"t" + std::to_string(trial) + "_" + std::to_string(cid) + "_" +
                                std::to_string(j),
                            cid});
    }
    SplitConfig cfg;
    cfg.num_ids = num_ids;
    const double tf[3] = {0.1, 0.2, 0.3};
    const double lf[3] = {0.3, 0.5, 0.7};
    cfg.test_fraction = tf[trial % 3];
    cfg.labeled_fraction = lf[(trial / 3) % 3];
    cfg.seed = 9300 + static_cast<std::uint64_t>(trial);
    GFDSplit s = build_gfd_split(manifest, cfg);

    // independent recount of the per-ID holdout/labeling arithmetic
    std::set<int> known(s.known_ids.begin(), s.known_ids.end());
    std::set<int> selected = known;
    selected.insert(s.unknown_ids.begin(), s.unknown_ids.end());
    std::int64_t want_test = 0, want_lab = 0, want_unlab = 0;
    for (const auto& [cid, n] : per_id) {
      if (!selected.count(cid)) continue;
      const int n_test = std::max(1, static_cast<int>(std::floor(cfg.test_fraction * n)));
      const int n_train = n - n_test;
      const int n_lab =
          known.count(cid) ? static_cast<int>(std::floor(cfg.labeled_fraction * n_train)) : 0;
      want_test += n_test;
      want_lab += n_lab;
      want_unlab += n_train - n_lab;
    }
    const bool ok = static_cast<std::int64_t>(s.test.size()) == want_test &&
                    static_cast<std::int64_t>(s.labeled_train.size()) == want_lab &&
                    static_cast<std::int64_t>(s.unlabeled_train.size()) == want_unlab &&
                    validate_split(s).ok();
    if (!ok) ++failures;
  }
  record(9, "split arithmetic", failures == 0,
         fmt("%d/20 fuzzed configs disagree with the independent recount", failures));
}

// ---------------------------------------------------------------------------
// 10. Paper-anchored parameter accounting
// ---------------------------------------------------------------------------

void criterion_10() {
  const double REL = 0.15;                   // +-15% around the printed numbers
  const double ADD = 13.8e6, TRAIN = 41.1e6, TOTAL = 207.7e6;
  ParamCounts fg = count_params(paper_scale_model(Variant::facegcd));
  ParamCounts sg = count_params(paper_scale_model(Variant::static_generator));
  const bool add_ok = std::fabs(fg.additional - ADD) <= REL * ADD;
  const bool train_ok = std::fabs(fg.trainable - TRAIN) <= REL * TRAIN;
  const bool total_ok = std::fabs(fg.total - TOTAL) <= REL * TOTAL;
  const bool ratio_ok = sg.additional >= 10 * fg.additional;
  record(10, "paper-scale parameter accounting", add_ok && train_ok && total_ok && ratio_ok,
         fmt("additional %.1fM (ref 13.8M), trainable %.1fM (ref 41.1M), total %.1fM (ref 207.7M), "
             "static-gen ratio %.1fx (need >=10x)",
             fg.additional / 1e6, fg.trainable / 1e6, fg.total / 1e6,
             static_cast<double>(sg.additional) / static_cast<double>(fg.additional)));
}

// ---------------------------------------------------------------------------
// 11. End-to-end directional ablation
// ---------------------------------------------------------------------------

ExperimentConfig ablation_config(std::uint64_t seed, const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.synth.num_ids = 40;
  cfg.synth.images_per_id = 50;
  cfg.synth.image_side = 32;
  cfg.synth.intra_class_jitter = 0.8;
  cfg.split.num_ids = 40;  // known_fraction 0.5 -> 20 known / 20 unknown
  cfg.train.epochs = 30;
  cfg.train.batch_size = 128;
  cfg.train.base_lr = 0.1;
  cfg.train.warmup_epochs = 2;
  cfg.train.warmup_lr = 1e-3;
  cfg.train.milestones.clear();
  cfg.train.eval_every = 0;
  cfg.loss.temperature = 0.1f;
  cfg.seed = seed;
  cfg.output_dir = out_dir + "/s" + std::to_string(seed);
  return cfg;
}

void criterion_11() {
  const double MARGIN = 5.0;  // percentage points, facegcd over static_pool
  const std::string dir = (fs::temp_directory_path() / "facegcd_accept_ablation").string();
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  double face = 0.0, pool = 0.0, nop = 0.0;
  const int SEEDS = 3;
  for (int seed = 1; seed <= SEEDS; ++seed) {
    DiscoveryReport rep =
        run_variants(ablation_config(static_cast<std::uint64_t>(seed), dir),
                     {Variant::facegcd, Variant::static_pool, Variant::no_prefix});
    face += rep.runs[0].eval.acc.all / SEEDS;
    pool += rep.runs[1].eval.acc.all / SEEDS;
    nop += rep.runs[2].eval.acc.all / SEEDS;
  }
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  record(11, "directional ablation (3 seeds, 30 epochs)",
         face - pool >= MARGIN && face >= nop && minutes <= 30.0,
         fmt("mean All-ACC facegcd %.1f vs static_pool %.1f (margin %.1f, need >=%.1f) vs "
             "no_prefix %.1f; %.1f min",
             face, pool, face - pool, MARGIN, nop, minutes));
}

// ---------------------------------------------------------------------------
// 12. Determinism: replay from the config snapshot via the CLI
// ---------------------------------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void criterion_12() {
  const std::string root = (fs::temp_directory_path() / "facegcd_accept_replay").string();
  fs::remove_all(root);
  fs::create_directories(root);

  ExperimentConfig cfg;
  cfg.synth.num_ids = 8;
  cfg.synth.images_per_id = 12;
  cfg.synth.image_side = 16;
  cfg.synth.intra_class_jitter = 0.4;
  cfg.split.num_ids = 8;
  cfg.model.encoder.num_layers = 2;
  cfg.model.encoder.embed_dim = 32;
  cfg.model.encoder.num_heads = 2;
  cfg.model.encoder.patch_size = 8;
  cfg.model.encoder.image_side = 16;
  cfg.model.hypernet.hidden_dim = 32;
  cfg.model.hypernet.bottleneck = 4;
  cfg.model.prefix_len = 2;
  cfg.model.embed_out = 16;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 16;
  cfg.train.warmup_epochs = 0;
  cfg.train.milestones.clear();
  cfg.train.eval_every = 2;
  cfg.discover.n_init = 3;
  cfg.discover.nnc_k = 3;
  cfg.seed = 912;
  cfg.derive_seeds();
  const std::string snapshot = root + "/config.txt";
  save_config_file(cfg, snapshot);

  auto replay = [&](const std::string& out_dir) {
    for (const char* stage : {"synth", "split", "train", "extract", "cluster", "eval"}) {
      const std::string cmd = std::string(FACEGCD_CLI_PATH) + " " + stage + " -c " + snapshot +
                              " -o " + out_dir + " >/dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) throw DataError(std::string("cli stage failed: ") + stage);
    }
  };
  replay(root + "/a");
  replay(root + "/b");

  const std::string ea = slurp(root + "/a/eval.json");
  const std::string eb = slurp(root + "/b/eval.json");
  const bool logs_match = slurp(root + "/a/train_log.txt") == slurp(root + "/b/train_log.txt");
  record(12, "replay determinism via fresh cli processes", !ea.empty() && ea == eb && logs_match,
         fmt("eval results %s (%zu bytes); train logs %s", ea == eb ? "identical" : "DIFFER",
             ea.size(), logs_match ? "identical" : "DIFFER"));
}

}  // namespace

int main() {
  run_criterion(1, "prefix no-op identity", criterion_1);
  run_criterion(2, "zero hypernet => zero prefixes", criterion_2);
  run_criterion(3, "gradient partition", criterion_3);
  run_criterion(4, "loss oracle", criterion_4);
  run_criterion(5, "hypernet-path gradients vs finite differences", criterion_5);
  run_criterion(6, "hungarian accuracy oracle", criterion_6);
  run_criterion(7, "ssk properties", criterion_7);
  run_criterion(8, "nnc oracle", criterion_8);
  run_criterion(9, "split arithmetic", criterion_9);
  run_criterion(10, "paper-scale parameter accounting", criterion_10);
  run_criterion(11, "directional ablation (3 seeds, 30 epochs)", criterion_11);
  run_criterion(12, "replay determinism via fresh cli processes", criterion_12);

  int passed = 0;
  for (const Criterion& c : g_results)
    if (c.pass) ++passed;
  std::printf("ACCEPTANCE: %d/12 criteria passed\n", passed);
  return passed == 12 ? 0 : 1;
}
