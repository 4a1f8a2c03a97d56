#include <cmath>
#include <vector>

#include "doctest.h"
#include "sleepstage/adam.hpp"
#include "sleepstage/ops.hpp"
#include "sleepstage/tape.hpp"
#include "test_util.hpp"

using namespace sleepstage;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.v) v = rng.uniform(-scale, scale);
  return t;
}

// Naive over-time convolution (triple loop) for one sample.
std::vector<double> naive_conv(const Tensor& x, const Tensor& f) {
  const auto P = x.shape[0], M = x.shape[1], T = x.shape[2], w = f.shape[2];
  std::vector<double> out(static_cast<std::size_t>(T - w + 1), 0.0);
  for (std::int64_t t = 0; t + w <= T; ++t)
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t k = 0; k < w; ++k)
          out[static_cast<std::size_t>(t)] +=
              x.at({p, m, t + k}) * f.at({p, m, k});
  return out;
}

}  // namespace

TEST_CASE("conv_over_time: all-ones counting case") {
  Tape t;
  Tensor x({1, 1, 2, 4});
  x.fill(1.0);
  Tensor f({1, 1, 2, 2});
  f.fill(1.0);
  NodeId xid = t.leaf(std::move(x));
  NodeId fid = t.leaf(std::move(f));
  NodeId bid = t.leaf(Tensor({1}));
  NodeId out = conv_over_time(t, xid, fid, bid);
  CHECK(t.value(out).shape == std::vector<std::int64_t>{1, 3, 1});
  for (int i = 0; i < 3; ++i) CHECK(t.value(out).v[i] == doctest::Approx(4.0));
}

TEST_CASE("conv_over_time: differencing filter hand oracle") {
  Tape t;
  NodeId xid = t.leaf(Tensor::from({1, 1, 1, 4}, {1, 2, 3, 4}));
  NodeId fid = t.leaf(Tensor::from({1, 1, 1, 2}, {1, -1}));
  NodeId bid = t.leaf(Tensor({1}));
  NodeId out = conv_over_time(t, xid, fid, bid);
  for (int i = 0; i < 3; ++i) CHECK(t.value(out).v[i] == doctest::Approx(-1.0));
}

TEST_CASE("conv_over_time: matches naive oracle on random shapes up to 3x8x16") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t P = 1 + rng.uniform_int(3);
    const std::int64_t M = 1 + rng.uniform_int(8);
    const std::int64_t T = 2 + rng.uniform_int(15);
    const std::int64_t w = 1 + rng.uniform_int(T);
    const std::int64_t Q = 1 + rng.uniform_int(4);
    const std::int64_t B = 1 + rng.uniform_int(3);
    Tensor x = random_tensor({B, P, M, T}, rng);
    Tensor f = random_tensor({Q, P, M, w}, rng);
    Tensor b = random_tensor({Q}, rng);
    Tape t;
    NodeId out = conv_over_time(t, t.leaf(x), t.leaf(f), t.leaf(b));
    for (std::int64_t bi = 0; bi < B; ++bi)
      for (std::int64_t q = 0; q < Q; ++q) {
        Tensor xs({P, M, T});
        for (std::int64_t i = 0; i < P * M * T; ++i)
          xs.v[static_cast<std::size_t>(i)] =
              x.v[static_cast<std::size_t>(bi * P * M * T + i)];
        Tensor fs({P, M, w});
        for (std::int64_t i = 0; i < P * M * w; ++i)
          fs.v[static_cast<std::size_t>(i)] =
              f.v[static_cast<std::size_t>(q * P * M * w + i)];
        auto ref = naive_conv(xs, fs);
        for (std::size_t tt = 0; tt < ref.size(); ++tt)
          CHECK(t.value(out).at({bi, static_cast<std::int64_t>(tt), q}) ==
                doctest::Approx(ref[tt] + b.v[static_cast<std::size_t>(q)])
                    .epsilon(1e-12));
      }
  }
}

TEST_CASE("conv_over_time: linear in input and filter") {
  Rng rng(5);
  Tensor x1 = random_tensor({1, 2, 3, 10}, rng);
  Tensor x2 = random_tensor({1, 2, 3, 10}, rng);
  Tensor f = random_tensor({2, 2, 3, 3}, rng);
  Tensor zero_b({2});
  const double a = 2.5, c = -1.25;
  Tensor xmix({1, 2, 3, 10});
  for (std::size_t i = 0; i < xmix.v.size(); ++i) xmix.v[i] = a * x1.v[i] + c * x2.v[i];
  Tape t;
  NodeId o1 = conv_over_time(t, t.leaf(x1), t.leaf(f), t.leaf(zero_b));
  NodeId o2 = conv_over_time(t, t.leaf(x2), t.leaf(f), t.leaf(zero_b));
  NodeId om = conv_over_time(t, t.leaf(xmix), t.leaf(f), t.leaf(zero_b));
  for (std::size_t i = 0; i < t.value(om).v.size(); ++i)
    CHECK(t.value(om).v[i] ==
          doctest::Approx(a * t.value(o1).v[i] + c * t.value(o2).v[i]).epsilon(1e-12));
}

TEST_CASE("conv_over_time: extent mismatch raises") {
  Tape t;
  NodeId x = t.leaf(Tensor({1, 2, 3, 5}));
  NodeId f = t.leaf(Tensor({1, 2, 4, 2}));  // M mismatch
  NodeId b = t.leaf(Tensor({1}));
  CHECK_THROWS_AS(conv_over_time(t, x, f, b), Error);
  NodeId fw = t.leaf(Tensor({1, 2, 3, 6}));  // w > T
  CHECK_THROWS_AS(conv_over_time(t, x, fw, b), Error);
}

TEST_CASE("max_over_time: brute force + first-index tie break") {
  Tape t;
  NodeId x = t.leaf(Tensor::from({1, 3, 1}, {0.1, 3.0, -2.0}), true);
  NodeId m = max_over_time(t, x);
  CHECK(t.value(m).v[0] == doctest::Approx(3.0));

  Tape t2;
  NodeId xc = t2.leaf(Tensor::from({1, 3, 1}, {2.0, 2.0, 2.0}), true);
  NodeId mc = max_over_time(t2, xc);
  CHECK(t2.value(mc).v[0] == doctest::Approx(2.0));
  t2.backward(mc);
  CHECK(t2.grad(xc).v[0] == doctest::Approx(1.0));
  CHECK(t2.grad(xc).v[1] == doctest::Approx(0.0));
  CHECK(t2.grad(xc).v[2] == doctest::Approx(0.0));

  Rng rng(9);
  Tensor big = random_tensor({2, 100, 3}, rng);
  Tape t3;
  NodeId xb = t3.leaf(big);
  NodeId mb = max_over_time(t3, xb);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t q = 0; q < 3; ++q) {
      double best = -1e300;
      for (std::int64_t l = 0; l < 100; ++l)
        best = std::max(best, big.at({b, l, q}));
      CHECK(t3.value(mb).at({b, q}) == doctest::Approx(best));
    }
}

TEST_CASE("softmax: spec examples via softmax_slots") {
  Tensor z = Tensor::from({1, 5}, {0, 0, 0, 0, 0});
  Tensor p = softmax_slots(z, 1, 5);
  for (int i = 0; i < 5; ++i) CHECK(p.v[i] == doctest::Approx(0.2).epsilon(1e-12));

  Tensor big = Tensor::from({1, 2}, {1000.0, 0.0});
  Tensor pb = softmax_slots(big, 1, 2);
  CHECK(pb.v[0] == doctest::Approx(1.0));
  CHECK(pb.v[1] == doctest::Approx(0.0));
  CHECK(pb.all_finite());

  Tensor z3 = Tensor::from({1, 3}, {1, 2, 3});
  Tensor p3 = softmax_slots(z3, 1, 3);
  const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(p3.v[i] == doctest::Approx(std::exp(1.0 + i) / denom).epsilon(1e-12));
  double sum = p3.v[0] + p3.v[1] + p3.v[2];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax: shift invariance and permutation equivariance") {
  Tensor z = Tensor::from({1, 4}, {0.3, -1.2, 2.0, 0.0});
  Tensor zs = Tensor::from({1, 4}, {0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5, 7.5});
  Tensor p = softmax_slots(z, 1, 4);
  Tensor ps = softmax_slots(zs, 1, 4);
  for (int i = 0; i < 4; ++i) CHECK(p.v[i] == doctest::Approx(ps.v[i]).epsilon(1e-12));
  Tensor zp = Tensor::from({1, 4}, {2.0, 0.3, 0.0, -1.2});
  Tensor pp = softmax_slots(zp, 1, 4);
  CHECK(pp.v[0] == doctest::Approx(p.v[2]).epsilon(1e-12));
  CHECK(pp.v[1] == doctest::Approx(p.v[0]).epsilon(1e-12));
  CHECK(pp.v[2] == doctest::Approx(p.v[3]).epsilon(1e-12));
  CHECK(pp.v[3] == doctest::Approx(p.v[1]).epsilon(1e-12));
}

TEST_CASE("softmax: non-finite input raises") {
  Tensor z = Tensor::from({1, 2}, {1.0, 0.0});
  z.v[0] = std::nan("");
  CHECK_THROWS_AS(softmax_slots(z, 1, 2), Error);
}

TEST_CASE("dropout: inference is identity; train mask expectation within 1%") {
  Rng rng(77);
  Tape t;
  Tensor x({1, 100000});
  x.fill(1.0);
  NodeId xid = t.leaf(x);
  NodeId same = dropout(t, xid, 0.2, /*train=*/false, rng);
  CHECK(same == xid);
  NodeId zero_rate = dropout(t, xid, 0.0, /*train=*/true, rng);
  CHECK(zero_rate == xid);
  NodeId dropped = dropout(t, xid, 0.2, /*train=*/true, rng);
  double mean = 0;
  for (double v : t.value(dropped).v) mean += v;
  mean /= static_cast<double>(t.value(dropped).v.size());
  CHECK(std::fabs(mean - 1.0) < 0.01);
  bool has_zero = false, has_scaled = false;
  for (double v : t.value(dropped).v) {
    if (v == 0.0) has_zero = true;
    if (std::fabs(v - 1.25) < 1e-12) has_scaled = true;
  }
  CHECK(has_zero);
  CHECK(has_scaled);
}

TEST_CASE("tape: f(x) = x^2 gradient at 3 is 6") {
  Tape t;
  NodeId x = t.leaf(Tensor::scalar(3.0), true);
  NodeId y = l2_penalty(t, {x}, 2.0);  // (2/2) * x^2 = x^2
  CHECK(t.value(y).v[0] == doctest::Approx(9.0));
  t.backward(y);
  CHECK(t.grad(x).v[0] == doctest::Approx(6.0));
}

TEST_CASE("tape: diamond graph accumulates both paths") {
  Tape t;
  NodeId x = t.leaf(Tensor::from({1, 2}, {1.0, -2.0}), true);
  NodeId a = relu(t, x);
  NodeId b = relu(t, x);
  NodeId s = add(t, a, b);
  NodeId loss = l2_penalty(t, {s}, 2.0);  // sum of squares of (2*relu(x))
  t.backward(loss);
  // d/dx (2x)^2 = 8x at x=1 -> 8; relu kills the negative lane.
  CHECK(t.grad(x).v[0] == doctest::Approx(8.0));
  CHECK(t.grad(x).v[1] == doctest::Approx(0.0));
}

TEST_CASE("tape: backward requires scalar root") {
  Tape t;
  NodeId x = t.leaf(Tensor::from({1, 2}, {1.0, 2.0}), true);
  NodeId y = relu(t, x);
  CHECK_THROWS_AS(t.backward(y), Error);
}

TEST_CASE("multitask_xent: uniform posteriors give S * ln Y") {
  Tape t;
  Tensor logits({2, 15});  // tau=1 -> 3 slots of 5, zeros -> uniform
  NodeId lid = t.leaf(logits, true);
  std::vector<int> labels{0, 1, 2, 3, 4, 0};
  NodeId loss = multitask_xent(t, lid, labels, 3, 5);
  CHECK(t.value(loss).v[0] == doctest::Approx(3.0 * std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("multitask_xent: gradient is (p - onehot)/B per slot") {
  Rng rng(31);
  Tensor logits = random_tensor({2, 6}, rng);
  Tape t;
  NodeId lid = t.leaf(logits, true);
  std::vector<int> labels{2, 0};
  Tensor probs;
  NodeId loss = multitask_xent(t, lid, labels, 1, 6, &probs);
  t.backward(loss);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t y = 0; y < 6; ++y) {
      const double expect =
          (probs.at({b, y}) - (labels[static_cast<std::size_t>(b)] == y ? 1 : 0)) / 2.0;
      CHECK(t.grad(lid).at({b, y}) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("composed chain passes central-difference gradient check") {
  // conv -> relu -> 1-max pool -> concat -> affine -> multi-slot xent (+ L2)
  Rng rng(17);
  const std::int64_t B = 2, P = 2, M = 4, T = 6, Y = 3, S = 3;
  Tensor x = random_tensor({B, P, M, T}, rng);
  Tensor f1 = random_tensor({2, P, M, 2}, rng, 0.5);
  Tensor f2 = random_tensor({2, P, M, 3}, rng, 0.5);
  Tensor cb1 = random_tensor({2}, rng, 0.1);
  Tensor cb2 = random_tensor({2}, rng, 0.1);
  Tensor w = random_tensor({S * Y, 4}, rng, 0.5);
  Tensor wb = random_tensor({S * Y}, rng, 0.1);
  std::vector<int> labels{0, 2, 1, 2, 0, 1};
  const double lambda = 0.01;

  // Pack all parameters into one flat vector for the FD utility.
  std::vector<Tensor*> parts{&f1, &cb1, &f2, &cb2, &w, &wb};
  std::vector<double> flat;
  for (auto* p : parts) flat.insert(flat.end(), p->v.begin(), p->v.end());

  auto build = [&](const std::vector<double>& theta, Tape& t,
                   std::vector<NodeId>& param_ids) {
    std::size_t off = 0;
    std::vector<Tensor> local;
    local.reserve(parts.size());
    for (auto* p : parts) {
      Tensor cp = *p;
      for (std::size_t i = 0; i < cp.v.size(); ++i) cp.v[i] = theta[off + i];
      off += cp.v.size();
      local.push_back(std::move(cp));
    }
    NodeId xid = t.leaf(x);
    NodeId f1id = t.leaf(local[0], true), b1id = t.leaf(local[1], true);
    NodeId f2id = t.leaf(local[2], true), b2id = t.leaf(local[3], true);
    NodeId wid = t.leaf(local[4], true), wbid = t.leaf(local[5], true);
    param_ids = {f1id, b1id, f2id, b2id, wid, wbid};
    NodeId c1 = max_over_time(t, relu(t, conv_over_time(t, xid, f1id, b1id)));
    NodeId c2 = max_over_time(t, relu(t, conv_over_time(t, xid, f2id, b2id)));
    NodeId feat = concat_cols(t, {c1, c2});
    NodeId logits = affine(t, feat, wid, wbid);
    NodeId data = multitask_xent(t, logits, labels, S, Y);
    NodeId pen = l2_penalty(t, param_ids, lambda);
    return add(t, data, pen);
  };

  auto eval = [&](const std::vector<double>& theta) {
    Tape t;
    std::vector<NodeId> ids;
    NodeId loss = build(theta, t, ids);
    return t.value(loss).v[0];
  };

  Tape t;
  std::vector<NodeId> ids;
  NodeId loss = build(flat, t, ids);
  t.backward(loss);
  std::vector<double> analytic;
  for (NodeId id : ids)
    analytic.insert(analytic.end(), t.grad(id).v.begin(), t.grad(id).v.end());

  CHECK(testutil::fd_worst_rel_err(eval, flat, analytic) < 1e-4);
}

TEST_CASE("l2 penalty: gradient adds exactly lambda * theta") {
  Rng rng(41);
  Tensor x = random_tensor({1, 1, 1, 6}, rng);
  Tensor f = random_tensor({1, 1, 1, 3}, rng, 0.5);
  Tensor b = random_tensor({1}, rng, 0.1);
  std::vector<int> labels{0};
  auto grads_for = [&](double lambda) {
    Tape t;
    NodeId fid = t.leaf(f, true), bid = t.leaf(b, true);
    NodeId pooled = max_over_time(t, relu(t, conv_over_time(t, t.leaf(x), fid, bid)));
    Tensor w2 = Tensor::from({2, 1}, {0.7, -0.3});
    NodeId wid = t.leaf(w2, true);
    NodeId logits = affine(t, pooled, wid, t.leaf(Tensor({2})));
    NodeId loss = add(t, multitask_xent(t, logits, labels, 1, 2),
                      l2_penalty(t, {fid, bid, wid}, lambda));
    t.backward(loss);
    std::vector<double> g;
    g.insert(g.end(), t.grad(fid).v.begin(), t.grad(fid).v.end());
    g.insert(g.end(), t.grad(bid).v.begin(), t.grad(bid).v.end());
    g.insert(g.end(), t.grad(wid).v.begin(), t.grad(wid).v.end());
    return g;
  };
  auto g0 = grads_for(0.0);
  auto g1 = grads_for(0.125);
  std::vector<double> theta;
  theta.insert(theta.end(), f.v.begin(), f.v.end());
  theta.insert(theta.end(), b.v.begin(), b.v.end());
  theta.push_back(0.7);
  theta.push_back(-0.3);
  for (std::size_t i = 0; i < theta.size(); ++i)
    CHECK(g1[i] - g0[i] == doctest::Approx(0.125 * theta[i]).epsilon(1e-9));
}

TEST_CASE("apply_bank: forward matches naive product and gradients check out") {
  Rng rng(53);
  const std::int64_t B = 2, P = 2, F = 5, M = 3, T = 4;
  Tensor x = random_tensor({B, P, F, T}, rng);
  Tensor fb = random_tensor({M, F}, rng, 0.5);

  Tape t;
  NodeId fbid = t.leaf(fb, true);
  NodeId xid = t.leaf(x);
  NodeId out = apply_bank(t, fbid, xid);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t p = 0; p < P; ++p)
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t tt = 0; tt < T; ++tt) {
          double acc = 0;
          for (std::int64_t ff = 0; ff < F; ++ff)
            acc += fb.at({m, ff}) * x.at({b, p, ff, tt});
          CHECK(t.value(out).at({b, p, m, tt}) == doctest::Approx(acc).epsilon(1e-12));
        }

  auto eval = [&](const std::vector<double>& theta) {
    Tape t2;
    Tensor fb2 = fb;
    fb2.v = theta;
    NodeId fid = t2.leaf(fb2, true);
    NodeId o = apply_bank(t2, fid, t2.leaf(x));
    return t2.value(l2_penalty(t2, {o}, 2.0)).v[0];
  };
  Tape t3;
  NodeId fid3 = t3.leaf(fb, true);
  NodeId o3 = apply_bank(t3, fid3, t3.leaf(x));
  NodeId loss3 = l2_penalty(t3, {o3}, 2.0);
  t3.backward(loss3);
  std::vector<double> analytic(t3.grad(fid3).v.begin(), t3.grad(fid3).v.end());
  CHECK(testutil::fd_worst_rel_err(eval, fb.v, analytic) < 1e-4);
}

TEST_CASE("conv2d/maxpool2d/flatten: shapes, oracle, and gradient check") {
  Rng rng(67);
  const std::int64_t B = 2, H = 5, W = 6, C = 2, K = 3, kh = 2, kw = 3;
  Tensor x = random_tensor({B, H, W, C}, rng);
  Tensor k = random_tensor({K, kh, kw, C}, rng, 0.5);
  Tensor kb = random_tensor({K}, rng, 0.1);

  Tape t;
  NodeId kid = t.leaf(k, true), kbid = t.leaf(kb, true);
  NodeId conv = conv2d_valid(t, t.leaf(x), kid, kbid);
  CHECK(t.value(conv).shape == std::vector<std::int64_t>{B, 4, 4, K});
  // Naive oracle for one arbitrary cell.
  {
    const std::int64_t b = 1, ho = 2, wo = 1, kk = 2;
    double acc = kb.v[static_cast<std::size_t>(kk)];
    for (std::int64_t dh = 0; dh < kh; ++dh)
      for (std::int64_t dw = 0; dw < kw; ++dw)
        for (std::int64_t c = 0; c < C; ++c)
          acc += x.at({b, ho + dh, wo + dw, c}) * k.at({kk, dh, dw, c});
    CHECK(t.value(conv).at({b, ho, wo, kk}) == doctest::Approx(acc).epsilon(1e-12));
  }
  NodeId pooled = maxpool2d(t, conv, 2, 2);
  CHECK(t.value(pooled).shape == std::vector<std::int64_t>{B, 2, 2, K});
  NodeId flat = flatten(t, pooled);
  CHECK(t.value(flat).shape == std::vector<std::int64_t>{B, 2 * 2 * K});

  // Pooling oracle.
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < K; ++c) {
      double best = -1e300;
      for (std::int64_t dh = 0; dh < 2; ++dh)
        for (std::int64_t dw = 0; dw < 2; ++dw)
          best = std::max(best, t.value(conv).at({b, dh, dw, c}));
      CHECK(t.value(pooled).at({b, 0, 0, c}) == doctest::Approx(best));
    }

  auto eval = [&](const std::vector<double>& theta) {
    Tape t2;
    Tensor k2 = k;
    std::copy(theta.begin(), theta.begin() + k.v.size(), k2.v.begin());
    Tensor kb2 = kb;
    std::copy(theta.begin() + k.v.size(), theta.end(), kb2.v.begin());
    NodeId kid2 = t2.leaf(k2, true), kbid2 = t2.leaf(kb2, true);
    NodeId o = flatten(t2, maxpool2d(t2, relu(t2, conv2d_valid(t2, t2.leaf(x), kid2, kbid2)), 2, 2));
    return t2.value(l2_penalty(t2, {o}, 2.0)).v[0];
  };
  std::vector<double> theta(k.v);
  theta.insert(theta.end(), kb.v.begin(), kb.v.end());

  Tape t4;
  NodeId kid4 = t4.leaf(k, true), kbid4 = t4.leaf(kb, true);
  NodeId o4 = flatten(t4, maxpool2d(t4, relu(t4, conv2d_valid(t4, t4.leaf(x), kid4, kbid4)), 2, 2));
  NodeId loss4 = l2_penalty(t4, {o4}, 2.0);
  t4.backward(loss4);
  std::vector<double> analytic(t4.grad(kid4).v.begin(), t4.grad(kid4).v.end());
  analytic.insert(analytic.end(), t4.grad(kbid4).v.begin(), t4.grad(kbid4).v.end());
  CHECK(testutil::fd_worst_rel_err(eval, theta, analytic) < 1e-4);
}

TEST_CASE("maxpool2d: floor division drops the remainder") {
  Tape t;
  Tensor x({1, 7, 25, 1});
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = static_cast<double>(i);
  NodeId out = maxpool2d(t, t.leaf(x), 2, 2);
  CHECK(t.value(out).shape == std::vector<std::int64_t>{1, 3, 12, 1});
}

TEST_CASE("adam: zero gradient is a fixed point") {
  ParamMap params;
  params["w"] = Tensor::from({2}, {1.0, -2.0});
  ParamMap grads;
  grads["w"] = Tensor({2});
  Adam opt(0.1);
  opt.step(params, grads);
  CHECK(params["w"].v[0] == doctest::Approx(1.0));
  CHECK(params["w"].v[1] == doctest::Approx(-2.0));
}

TEST_CASE("adam: first step from fresh state is ~ lr * sign(g)") {
  ParamMap params;
  params["w"] = Tensor::from({3}, {0.0, 5.0, -1.0});
  ParamMap grads;
  grads["w"] = Tensor::from({3}, {0.5, -2.0, 1e-3});
  Adam opt(0.01);
  opt.step(params, grads);
  // mhat = g, vhat = g^2 -> delta = lr * g / (|g| + eps) ~= lr * sign(g)
  CHECK(params["w"].v[0] == doctest::Approx(0.0 - 0.01).epsilon(1e-6));
  CHECK(params["w"].v[1] == doctest::Approx(5.0 + 0.01).epsilon(1e-6));
  CHECK(params["w"].v[2] == doctest::Approx(-1.0 - 0.01).epsilon(1e-4));
}

TEST_CASE("adam: deterministic trajectories and state bookkeeping") {
  auto run = [] {
    ParamMap params;
    params["w"] = Tensor::from({2}, {0.3, -0.7});
    Adam opt(0.05);
    Rng rng(2024);
    for (int i = 0; i < 25; ++i) {
      ParamMap grads;
      grads["w"] = Tensor::from({2}, {rng.uniform(-1, 1), rng.uniform(-1, 1)});
      opt.step(params, grads);
    }
    return params["w"].v;
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);  // bit-identical
}

TEST_CASE("adam: shape mismatch raises") {
  ParamMap params;
  params["w"] = Tensor({2});
  ParamMap grads;
  grads["w"] = Tensor({3});
  Adam opt(0.1);
  CHECK_THROWS_AS(opt.step(params, grads), Error);
  ParamMap missing;
  CHECK_THROWS_AS(opt.step(params, missing), Error);
}

TEST_CASE("tape: finite check flags NaN when enabled") {
  Tape t;
  t.set_check_finite(true);
  Tensor bad({2});
  bad.v[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(t.leaf(bad), Error);
}
