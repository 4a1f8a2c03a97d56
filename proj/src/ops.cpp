#include "sleepstage/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <memory>

namespace sleepstage {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

void require(bool ok, const std::string& msg) {
  check(ok, ErrorKind::validation, msg);
}

}  // namespace

NodeId conv_over_time(Tape& t, NodeId x, NodeId filters, NodeId bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(filters);
  const Tensor& bv = t.value(bias);
  require(xv.shape.size() == 4, "conv_over_time: input must be [B,P,M,T]");
  require(wv.shape.size() == 4, "conv_over_time: filters must be [Q,P,M,w]");
  const std::int64_t B = xv.shape[0], P = xv.shape[1], M = xv.shape[2], T = xv.shape[3];
  const std::int64_t Q = wv.shape[0], wd = wv.shape[3];
  require(wv.shape[1] == P && wv.shape[2] == M,
          "conv_over_time: filter channel/band extents must match input");
  require(wd <= T, "conv_over_time: filter width exceeds time extent");
  require(bv.shape.size() == 1 && bv.shape[0] == Q, "conv_over_time: bias must be [Q]");
  const std::int64_t Tp = T - wd + 1;
  const std::int64_t K = P * M * wd;

  auto cols = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(B * Tp * K));
  {
    const double* xd = xv.data();
    double* cd = cols->data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t tp = 0; tp < Tp; ++tp) {
        double* row = cd + (b * Tp + tp) * K;
        for (std::int64_t p = 0; p < P; ++p)
          for (std::int64_t m = 0; m < M; ++m) {
            const double* src = xd + ((b * P + p) * M + m) * T + tp;
            double* dst = row + (p * M + m) * wd;
            for (std::int64_t k = 0; k < wd; ++k) dst[k] = src[k];
          }
      }
  }

  Tensor out({B, Tp, Q});
  {
    MapCM C(cols->data(), B * Tp, K);
    MapCM W(wv.data(), Q, K);
    MapM O(out.data(), B * Tp, Q);
    O.noalias() = C * W.transpose();
    for (std::int64_t r = 0; r < B * Tp; ++r)
      for (std::int64_t q = 0; q < Q; ++q) O(r, q) += bv.v[static_cast<std::size_t>(q)];
  }

  const bool needs = t.needs_grad(x) || t.needs_grad(filters) || t.needs_grad(bias);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, filters, bias, id, cols, B, P, M, T, Q, wd, Tp,
                       K](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      MapCM G(g.data(), B * Tp, Q);
      if (tp_.needs_grad(filters)) {
        MapCM C(cols->data(), B * Tp, K);
        MapM dW(tp_.grad(filters).data(), Q, K);
        dW.noalias() += G.transpose() * C;
      }
      if (tp_.needs_grad(bias)) {
        Tensor& db = tp_.grad(bias);
        for (std::int64_t r = 0; r < B * Tp; ++r)
          for (std::int64_t q = 0; q < Q; ++q)
            db.v[static_cast<std::size_t>(q)] += G(r, q);
      }
      if (tp_.needs_grad(x)) {
        const Tensor& wv2 = tp_.value(filters);
        MapCM W(wv2.data(), Q, K);
        MatRM colsGrad = G * W;  // [B*Tp, K]
        Tensor& dx = tp_.grad(x);
        double* xd = dx.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t tpos = 0; tpos < Tp; ++tpos) {
            const double* row = colsGrad.data() + (b * Tp + tpos) * K;
            for (std::int64_t p = 0; p < P; ++p)
              for (std::int64_t m = 0; m < M; ++m) {
                double* dst = xd + ((b * P + p) * M + m) * T + tpos;
                const double* src = row + (p * M + m) * wd;
                for (std::int64_t k = 0; k < wd; ++k) dst[k] += src[k];
              }
          }
      }
    };
  }
  return id;
}

NodeId relu(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.v.size(); ++i) out.v[i] = xv.v[i] > 0 ? xv.v[i] : 0.0;
  const bool needs = t.needs_grad(x);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, id](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      const Tensor& xv2 = tp_.value(x);
      Tensor& dx = tp_.grad(x);
      for (std::size_t i = 0; i < g.v.size(); ++i)
        if (xv2.v[i] > 0) dx.v[i] += g.v[i];
    };
  }
  return id;
}

NodeId max_over_time(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  require(xv.shape.size() == 3, "max_over_time: input must be [B,L,Q]");
  const std::int64_t B = xv.shape[0], L = xv.shape[1], Q = xv.shape[2];
  require(L >= 1, "max_over_time: empty time axis");
  Tensor out({B, Q});
  auto arg = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(B * Q));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t q = 0; q < Q; ++q) {
      double best = xv.v[static_cast<std::size_t>((b * L) * Q + q)];
      std::int32_t besti = 0;
      for (std::int64_t l = 1; l < L; ++l) {
        const double v = xv.v[static_cast<std::size_t>((b * L + l) * Q + q)];
        if (v > best) {  // strict: ties keep the first index
          best = v;
          besti = static_cast<std::int32_t>(l);
        }
      }
      out.v[static_cast<std::size_t>(b * Q + q)] = best;
      (*arg)[static_cast<std::size_t>(b * Q + q)] = besti;
    }
  const bool needs = t.needs_grad(x);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, id, arg, B, L, Q](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      Tensor& dx = tp_.grad(x);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t q = 0; q < Q; ++q) {
          const std::int64_t l = (*arg)[static_cast<std::size_t>(b * Q + q)];
          dx.v[static_cast<std::size_t>((b * L + l) * Q + q)] +=
              g.v[static_cast<std::size_t>(b * Q + q)];
        }
    };
  }
  return id;
}

NodeId concat_cols(Tape& t, const std::vector<NodeId>& xs) {
  require(!xs.empty(), "concat_cols: empty input list");
  const std::int64_t B = t.value(xs[0]).shape[0];
  std::int64_t D = 0;
  bool needs = false;
  for (NodeId nid : xs) {
    const Tensor& v = t.value(nid);
    require(v.shape.size() == 2 && v.shape[0] == B, "concat_cols: inputs must be [B,Di]");
    D += v.shape[1];
    needs = needs || t.needs_grad(nid);
  }
  Tensor out({B, D});
  {
    std::int64_t off = 0;
    for (NodeId nid : xs) {
      const Tensor& v = t.value(nid);
      const std::int64_t Di = v.shape[1];
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t d = 0; d < Di; ++d)
          out.v[static_cast<std::size_t>(b * D + off + d)] =
              v.v[static_cast<std::size_t>(b * Di + d)];
      off += Di;
    }
  }
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    auto parents = std::make_shared<std::vector<NodeId>>(xs);
    t.node(id).back = [parents, id, B, D](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      std::int64_t off = 0;
      for (NodeId nid : *parents) {
        const std::int64_t Di = tp_.value(nid).shape[1];
        if (tp_.needs_grad(nid)) {
          Tensor& dx = tp_.grad(nid);
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t d = 0; d < Di; ++d)
              dx.v[static_cast<std::size_t>(b * Di + d)] +=
                  g.v[static_cast<std::size_t>(b * D + off + d)];
        }
        off += Di;
      }
    };
  }
  return id;
}

NodeId dropout(Tape& t, NodeId x, double rate, bool train_mode, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!train_mode || rate == 0.0) return x;
  const Tensor& xv = t.value(x);
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(xv.v.size());
  for (auto& m : *mask) m = (rng.uniform() < rate) ? 0.0 : keep_scale;
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.v.size(); ++i) out.v[i] = xv.v[i] * (*mask)[i];
  const bool needs = t.needs_grad(x);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, id, mask](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      Tensor& dx = tp_.grad(x);
      for (std::size_t i = 0; i < g.v.size(); ++i) dx.v[i] += g.v[i] * (*mask)[i];
    };
  }
  return id;
}

NodeId affine(Tape& t, NodeId x, NodeId weights, NodeId bias) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weights);
  const Tensor& bv = t.value(bias);
  require(xv.shape.size() == 2, "affine: input must be [B,D]");
  require(wv.shape.size() == 2, "affine: weights must be [K,D]");
  const std::int64_t B = xv.shape[0], D = xv.shape[1], K = wv.shape[0];
  require(wv.shape[1] == D, "affine: weight inner dim mismatch");
  require(bv.shape.size() == 1 && bv.shape[0] == K, "affine: bias must be [K]");
  Tensor out({B, K});
  {
    MapCM X(xv.data(), B, D);
    MapCM W(wv.data(), K, D);
    MapM O(out.data(), B, K);
    O.noalias() = X * W.transpose();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t k = 0; k < K; ++k) O(b, k) += bv.v[static_cast<std::size_t>(k)];
  }
  const bool needs = t.needs_grad(x) || t.needs_grad(weights) || t.needs_grad(bias);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, weights, bias, id, B, D, K](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      MapCM G(g.data(), B, K);
      if (tp_.needs_grad(weights)) {
        MapCM X(tp_.value(x).data(), B, D);
        MapM dW(tp_.grad(weights).data(), K, D);
        dW.noalias() += G.transpose() * X;
      }
      if (tp_.needs_grad(bias)) {
        Tensor& db = tp_.grad(bias);
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t k = 0; k < K; ++k)
            db.v[static_cast<std::size_t>(k)] += G(b, k);
      }
      if (tp_.needs_grad(x)) {
        MapCM W(tp_.value(weights).data(), K, D);
        MapM dX(tp_.grad(x).data(), B, D);
        dX.noalias() += G * W;
      }
    };
  }
  return id;
}

NodeId apply_bank(Tape& t, NodeId bank, NodeId x) {
  const Tensor& fb = t.value(bank);
  const Tensor& xv = t.value(x);
  require(fb.shape.size() == 2, "apply_bank: bank must be [M,F]");
  require(xv.shape.size() == 4, "apply_bank: input must be [B,P,F,T]");
  const std::int64_t M = fb.shape[0], F = fb.shape[1];
  const std::int64_t B = xv.shape[0], P = xv.shape[1], T = xv.shape[3];
  require(xv.shape[2] == F, "apply_bank: frequency extent mismatch");
  Tensor out({B, P, M, T});
  {
    MapCM W(fb.data(), M, F);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < P; ++p) {
        MapCM X(xv.data() + ((b * P + p) * F) * T, F, T);
        MapM O(out.data() + ((b * P + p) * M) * T, M, T);
        O.noalias() = W * X;
      }
  }
  const bool needs = t.needs_grad(bank) || t.needs_grad(x);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [bank, x, id, B, P, M, F, T](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      if (tp_.needs_grad(bank)) {
        MapM dW(tp_.grad(bank).data(), M, F);
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t p = 0; p < P; ++p) {
            MapCM G(g.data() + ((b * P + p) * M) * T, M, T);
            MapCM X(tp_.value(x).data() + ((b * P + p) * F) * T, F, T);
            dW.noalias() += G * X.transpose();
          }
      }
      if (tp_.needs_grad(x)) {
        MapCM W(tp_.value(bank).data(), M, F);
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t p = 0; p < P; ++p) {
            MapCM G(g.data() + ((b * P + p) * M) * T, M, T);
            MapM dX(tp_.grad(x).data() + ((b * P + p) * F) * T, F, T);
            dX.noalias() += W.transpose() * G;
          }
      }
    };
  }
  return id;
}

NodeId conv2d_valid(Tape& t, NodeId x, NodeId kernels, NodeId bias) {
  const Tensor& xv = t.value(x);
  const Tensor& kv = t.value(kernels);
  const Tensor& bv = t.value(bias);
  require(xv.shape.size() == 4, "conv2d_valid: input must be [B,H,W,C]");
  require(kv.shape.size() == 4, "conv2d_valid: kernels must be [K,kh,kw,C]");
  const std::int64_t B = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3];
  const std::int64_t K = kv.shape[0], kh = kv.shape[1], kw = kv.shape[2];
  require(kv.shape[3] == C, "conv2d_valid: channel mismatch");
  require(kh <= H && kw <= W, "conv2d_valid: kernel larger than input");
  require(bv.shape.size() == 1 && bv.shape[0] == K, "conv2d_valid: bias must be [K]");
  const std::int64_t Ho = H - kh + 1, Wo = W - kw + 1;
  const std::int64_t D = kh * kw * C;

  auto cols = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(B * Ho * Wo * D));
  {
    const double* xd = xv.data();
    double* cd = cols->data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t ho = 0; ho < Ho; ++ho)
        for (std::int64_t wo = 0; wo < Wo; ++wo) {
          double* row = cd + (((b * Ho + ho) * Wo) + wo) * D;
          for (std::int64_t dh = 0; dh < kh; ++dh) {
            const double* src = xd + (((b * H + ho + dh) * W) + wo) * C;
            double* dst = row + dh * kw * C;
            for (std::int64_t j = 0; j < kw * C; ++j) dst[j] = src[j];
          }
        }
  }

  Tensor out({B, Ho, Wo, K});
  {
    MapCM Cm(cols->data(), B * Ho * Wo, D);
    MapCM Km(kv.data(), K, D);
    MapM O(out.data(), B * Ho * Wo, K);
    O.noalias() = Cm * Km.transpose();
    for (std::int64_t r = 0; r < B * Ho * Wo; ++r)
      for (std::int64_t k = 0; k < K; ++k) O(r, k) += bv.v[static_cast<std::size_t>(k)];
  }

  const bool needs = t.needs_grad(x) || t.needs_grad(kernels) || t.needs_grad(bias);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, kernels, bias, id, cols, B, H, W, C, K, kh, kw, Ho, Wo,
                       D](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      MapCM G(g.data(), B * Ho * Wo, K);
      if (tp_.needs_grad(kernels)) {
        MapCM Cm(cols->data(), B * Ho * Wo, D);
        MapM dK(tp_.grad(kernels).data(), K, D);
        dK.noalias() += G.transpose() * Cm;
      }
      if (tp_.needs_grad(bias)) {
        Tensor& db = tp_.grad(bias);
        for (std::int64_t r = 0; r < B * Ho * Wo; ++r)
          for (std::int64_t k = 0; k < K; ++k)
            db.v[static_cast<std::size_t>(k)] += G(r, k);
      }
      if (tp_.needs_grad(x)) {
        MapCM Km(tp_.value(kernels).data(), K, D);
        MatRM colsGrad = G * Km;  // [B*Ho*Wo, D]
        Tensor& dx = tp_.grad(x);
        double* xd = dx.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t ho = 0; ho < Ho; ++ho)
            for (std::int64_t wo = 0; wo < Wo; ++wo) {
              const double* row = colsGrad.data() + (((b * Ho + ho) * Wo) + wo) * D;
              for (std::int64_t dh = 0; dh < kh; ++dh) {
                double* dst = xd + (((b * H + ho + dh) * W) + wo) * C;
                const double* src = row + dh * kw * C;
                for (std::int64_t j = 0; j < kw * C; ++j) dst[j] += src[j];
              }
            }
      }
    };
  }
  return id;
}

NodeId maxpool2d(Tape& t, NodeId x, std::int64_t ph, std::int64_t pw) {
  const Tensor& xv = t.value(x);
  require(xv.shape.size() == 4, "maxpool2d: input must be [B,H,W,C]");
  require(ph >= 1 && pw >= 1, "maxpool2d: pool extents must be >= 1");
  const std::int64_t B = xv.shape[0], H = xv.shape[1], W = xv.shape[2], C = xv.shape[3];
  const std::int64_t Ho = H / ph, Wo = W / pw;
  require(Ho >= 1 && Wo >= 1, "maxpool2d: pool larger than input");
  Tensor out({B, Ho, Wo, C});
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(B * Ho * Wo * C));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t ho = 0; ho < Ho; ++ho)
      for (std::int64_t wo = 0; wo < Wo; ++wo)
        for (std::int64_t c = 0; c < C; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          std::int64_t besti = -1;
          for (std::int64_t dh = 0; dh < ph; ++dh)
            for (std::int64_t dw = 0; dw < pw; ++dw) {
              const std::int64_t src =
                  (((b * H + ho * ph + dh) * W) + wo * pw + dw) * C + c;
              const double v = xv.v[static_cast<std::size_t>(src)];
              if (v > best) {
                best = v;
                besti = src;
              }
            }
          const std::int64_t dst = (((b * Ho + ho) * Wo) + wo) * C + c;
          out.v[static_cast<std::size_t>(dst)] = best;
          (*arg)[static_cast<std::size_t>(dst)] = besti;
        }
  const bool needs = t.needs_grad(x);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, id, arg](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      Tensor& dx = tp_.grad(x);
      for (std::size_t i = 0; i < g.v.size(); ++i)
        dx.v[static_cast<std::size_t>((*arg)[i])] += g.v[i];
    };
  }
  return id;
}

NodeId flatten(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  require(xv.shape.size() >= 2, "flatten: input must have a batch dimension");
  const std::int64_t B = xv.shape[0];
  const std::int64_t D = xv.numel() / B;
  Tensor out = Tensor::from({B, D}, xv.v);
  const bool needs = t.needs_grad(x);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [x, id](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      Tensor& dx = tp_.grad(x);
      for (std::size_t i = 0; i < g.v.size(); ++i) dx.v[i] += g.v[i];
    };
  }
  return id;
}

NodeId add(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.same_shape(bv), "add: shape mismatch");
  Tensor out(av.shape);
  for (std::size_t i = 0; i < av.v.size(); ++i) out.v[i] = av.v[i] + bv.v[i];
  const bool needs = t.needs_grad(a) || t.needs_grad(b);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs) {
    t.node(id).back = [a, b, id](Tape& tp_) {
      const Tensor& g = tp_.node(id).grd;
      if (tp_.needs_grad(a)) {
        Tensor& da = tp_.grad(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) da.v[i] += g.v[i];
      }
      if (tp_.needs_grad(b)) {
        Tensor& db = tp_.grad(b);
        for (std::size_t i = 0; i < g.v.size(); ++i) db.v[i] += g.v[i];
      }
    };
  }
  return id;
}

NodeId l2_penalty(Tape& t, const std::vector<NodeId>& params, double lambda) {
  require(lambda >= 0.0, "l2_penalty: lambda must be non-negative");
  double acc = 0.0;
  for (NodeId p : params) acc += t.value(p).sum_squares();
  Tensor out = Tensor::scalar(0.5 * lambda * acc);
  bool needs = false;
  for (NodeId p : params) needs = needs || t.needs_grad(p);
  NodeId id = t.emplace(std::move(out), needs, nullptr);
  if (needs && lambda > 0.0) {
    auto ps = std::make_shared<std::vector<NodeId>>(params);
    t.node(id).back = [ps, id, lambda](Tape& tp_) {
      const double u = tp_.node(id).grd.v[0];
      for (NodeId p : *ps) {
        if (!tp_.needs_grad(p)) continue;
        const Tensor& th = tp_.value(p);
        Tensor& dp = tp_.grad(p);
        for (std::size_t i = 0; i < th.v.size(); ++i)
          dp.v[i] += u * lambda * th.v[i];
      }
    };
  }
  return id;
}

namespace {

// Stable softmax of one length-Y slot.
void softmax_row(const double* in, double* out, int Y) {
  double mx = in[0];
  for (int y = 1; y < Y; ++y) mx = std::max(mx, in[y]);
  double sum = 0.0;
  for (int y = 0; y < Y; ++y) {
    out[y] = std::exp(in[y] - mx);
    sum += out[y];
  }
  for (int y = 0; y < Y; ++y) out[y] /= sum;
}

constexpr double kProbFloor = 1e-12;

}  // namespace

NodeId multitask_xent(Tape& t, NodeId logits, const std::vector<int>& labels,
                      int n_slots, int n_classes, Tensor* probs_out) {
  const Tensor& lv = t.value(logits);
  require(lv.shape.size() == 2, "multitask_xent: logits must be [B, S*Y]");
  const std::int64_t B = lv.shape[0];
  const std::int64_t S = n_slots, Y = n_classes;
  require(lv.shape[1] == S * Y, "multitask_xent: logit width != slots * classes");
  require(static_cast<std::int64_t>(labels.size()) == B * S,
          "multitask_xent: label count != batch * slots");
  for (int lab : labels)
    require(lab >= 0 && lab < Y, "multitask_xent: label out of range");
  check(lv.all_finite(), ErrorKind::numeric, "multitask_xent: non-finite logits");

  auto probs = std::make_shared<Tensor>(Tensor({B, S * Y}));
  double loss = 0.0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t s = 0; s < S; ++s) {
      const double* in = lv.data() + b * S * Y + s * Y;
      double* out = probs->data() + b * S * Y + s * Y;
      softmax_row(in, out, static_cast<int>(Y));
      const int target = labels[static_cast<std::size_t>(b * S + s)];
      loss -= std::log(std::max(out[target], kProbFloor));
    }
  loss /= static_cast<double>(B);
  if (probs_out) *probs_out = *probs;

  const bool needs = t.needs_grad(logits);
  NodeId id = t.emplace(Tensor::scalar(loss), needs, nullptr);
  if (needs) {
    auto labs = std::make_shared<std::vector<int>>(labels);
    t.node(id).back = [logits, id, probs, labs, B, S, Y](Tape& tp_) {
      const double u = tp_.node(id).grd.v[0] / static_cast<double>(B);
      Tensor& dl = tp_.grad(logits);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t s = 0; s < S; ++s) {
          const double* p = probs->data() + b * S * Y + s * Y;
          double* d = dl.data() + b * S * Y + s * Y;
          const int target = (*labs)[static_cast<std::size_t>(b * S + s)];
          for (std::int64_t y = 0; y < Y; ++y)
            d[y] += u * (p[y] - (y == target ? 1.0 : 0.0));
        }
    };
  }
  return id;
}

Tensor softmax_slots(const Tensor& logits, int n_slots, int n_classes) {
  check(logits.shape.size() == 2 &&
            logits.shape[1] == static_cast<std::int64_t>(n_slots) * n_classes,
        ErrorKind::validation, "softmax_slots: bad logits shape");
  check(logits.all_finite(), ErrorKind::numeric, "softmax_slots: non-finite logits");
  Tensor out(logits.shape);
  const std::int64_t N = logits.shape[0];
  for (std::int64_t i = 0; i < N; ++i)
    for (int s = 0; s < n_slots; ++s)
      softmax_row(logits.data() + i * n_slots * n_classes + s * n_classes,
                  out.data() + i * n_slots * n_classes + s * n_classes, n_classes);
  return out;
}

}  // namespace sleepstage
