#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ctxst/tensor.hpp"
#include "kernels.hpp"

namespace ctxst {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_rank2(const Tensor& t, const char* op) {
  require(t.rank() <= 2, std::string(op) + ": rank > 2 not supported");
}

std::string dims(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2)
    fail("matmul: inner dimensions differ (" + dims(a) + " vs " + dims(b) + ")");
  std::vector<double> out_v(m * n, 0.0);
  kernels::matmul_acc(a.values().data(), b.values().data(), out_v.data(), m, k, n);
  const bool needs = a.requires_grad() || b.requires_grad();
  Tensor out({m, n}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), bd = b.data(), od = out.data();
    tape.record([ad, bd, od, m, k, n]() {
      const double* g = od->grad.data();
      if (ad->requires_grad) {
        // da[m x k] += g[m x n] * b^T[n x k]
        double* da = ad->grad.data();
        const double* bv = bd->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) da[i * k + p] += gv * bv[p * n + j];
          }
      }
      if (bd->requires_grad) {
        // db[k x n] += a^T[k x m] * g[m x n]
        double* db = bd->grad.data();
        const double* av = ad->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av_ip = av[i * k + p];
            if (av_ip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) db[p * n + j] += av_ip * g[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shapes differ (" + dims(a) + " vs " + dims(b) + ")");
  std::vector<double> out_v(a.size());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] + b.values()[i];
  const bool needs = a.requires_grad() || b.requires_grad();
  Tensor out(a.shape(), std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), bd = b.data(), od = out.data();
    tape.record([ad, bd, od]() {
      const auto& g = od->grad;
      if (ad->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bd->grad[i] += g[i];
    });
  }
  return out;
}

Tensor add_row(Tape& tape, const Tensor& a, const Tensor& bias) {
  require_rank2(a, "add_row");
  require(bias.rank() == 1, "add_row: bias must be rank 1");
  const std::size_t m = a.rows(), n = a.cols();
  require(bias.size() == n,
          "add_row: bias length " + std::to_string(bias.size()) + " vs " + std::to_string(n) +
              " columns");
  std::vector<double> out_v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out_v[i * n + j] = a.values()[i * n + j] + bias.values()[j];
  const bool needs = a.requires_grad() || bias.requires_grad();
  Tensor out({m, n}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), bd = bias.data(), od = out.data();
    tape.record([ad, bd, od, m, n]() {
      const auto& g = od->grad;
      if (ad->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) bd->grad[j] += g[i * n + j];
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shapes differ (" + dims(a) + " vs " + dims(b) + ")");
  std::vector<double> out_v(a.size());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] * b.values()[i];
  const bool needs = a.requires_grad() || b.requires_grad();
  Tensor out(a.shape(), std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), bd = b.data(), od = out.data();
    tape.record([ad, bd, od]() {
      const auto& g = od->grad;
      if (ad->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) ad->grad[i] += g[i] * bd->values[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < g.size(); ++i) bd->grad[i] += g[i] * ad->values[i];
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  require(std::isfinite(c), "scale: non-finite factor");
  std::vector<double> out_v(a.size());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] * c;
  const bool needs = a.requires_grad();
  Tensor out(a.shape(), std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od, c]() {
      for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * c;
    });
  }
  return out;
}

Tensor transpose(Tape& tape, const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out_v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out_v[j * m + i] = a.values()[i * n + j];
  const bool needs = a.requires_grad();
  Tensor out({n, m}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od, m, n]() {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ad->grad[i * n + j] += od->grad[j * m + i];
    });
  }
  return out;
}

Tensor relu(Tape& tape, const Tensor& a) {
  std::vector<double> out_v(a.size());
  for (std::size_t i = 0; i < out_v.size(); ++i) out_v[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  const bool needs = a.requires_grad();
  Tensor out(a.shape(), std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od]() {
      for (std::size_t i = 0; i < od->grad.size(); ++i)
        if (ad->values[i] > 0.0) ad->grad[i] += od->grad[i];
    });
  }
  return out;
}

Tensor softmax_rows(Tape& tape, const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out_v = a.values();
  kernels::softmax_rows_inplace(out_v.data(), m, n);
  const bool needs = a.requires_grad();
  Tensor out({m, n}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od, m, n]() {
      for (std::size_t i = 0; i < m; ++i) {
        const double* s = od->values.data() + i * n;
        const double* g = od->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * s[j];
        double* da = ad->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) da[j] += s[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor log_softmax(Tape& tape, const Tensor& a) {
  require_rank2(a, "log_softmax");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out_v = a.values();
  kernels::log_softmax_rows_inplace(out_v.data(), m, n);
  const bool needs = a.requires_grad();
  Tensor out({m, n}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od, m, n]() {
      for (std::size_t i = 0; i < m; ++i) {
        const double* lp = od->values.data() + i * n;
        const double* g = od->grad.data() + i * n;
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[j];
        double* da = ad->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) da[j] += g[j] - std::exp(lp[j]) * gsum;
      }
    });
  }
  return out;
}

Tensor layer_norm_rows(Tape& tape, const Tensor& a, const Tensor& gain, const Tensor& bias) {
  require_rank2(a, "layer_norm_rows");
  const std::size_t m = a.rows(), n = a.cols();
  require(gain.rank() == 1 && gain.size() == n, "layer_norm_rows: gain length mismatch");
  require(bias.rank() == 1 && bias.size() == n, "layer_norm_rows: bias length mismatch");
  constexpr double eps = 1e-5;
  std::vector<double> out_v(m * n);
  // Normalized rows and inverse stddevs are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.values().data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * iv;
      (*xhat)[i * n + j] = xh;
      out_v[i * n + j] = xh * gain.values()[j] + bias.values()[j];
    }
  }
  const bool needs = a.requires_grad() || gain.requires_grad() || bias.requires_grad();
  Tensor out({m, n}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), gd = gain.data(), bd = bias.data(), od = out.data();
    tape.record([ad, gd, bd, od, xhat, inv, m, n]() {
      const auto& g = od->grad;
      for (std::size_t i = 0; i < m; ++i) {
        const double* gi = g.data() + i * n;
        const double* xh = xhat->data() + i * n;
        if (gd->requires_grad)
          for (std::size_t j = 0; j < n; ++j) gd->grad[j] += gi[j] * xh[j];
        if (bd->requires_grad)
          for (std::size_t j = 0; j < n; ++j) bd->grad[j] += gi[j];
        if (ad->requires_grad) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = gi[j] * gd->values[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(n);
          mean_dxh_xh /= static_cast<double>(n);
          double* da = ad->grad.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            const double dxh = gi[j] * gd->values[j];
            da[j] += (*inv)[i] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor embed(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
  require_rank2(table, "embed");
  require(!ids.empty(), "embed: empty id list");
  const std::size_t v = table.rows(), n = table.cols();
  for (int id : ids)
    require(id >= 0 && static_cast<std::size_t>(id) < v,
            "embed: id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ")");
  std::vector<double> out_v(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.values().data() + static_cast<std::size_t>(ids[i]) * n, n,
                out_v.data() + i * n);
  const bool needs = table.requires_grad();
  Tensor out({ids.size(), n}, std::move(out_v), needs);
  if (needs) {
    auto td = table.data(), od = out.data();
    tape.record([td, od, ids, n]() {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = td->grad.data() + static_cast<std::size_t>(ids[i]) * n;
        const double* src = od->grad.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor slice_cols(Tape& tape, const Tensor& a, std::size_t start, std::size_t n) {
  require_rank2(a, "slice_cols");
  const std::size_t m = a.rows(), c = a.cols();
  require(start + n <= c, "slice_cols: slice [" + std::to_string(start) + ", " +
                              std::to_string(start + n) + ") exceeds " + std::to_string(c) +
                              " columns");
  std::vector<double> out_v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.values().data() + i * c + start, n, out_v.data() + i * n);
  const bool needs = a.requires_grad();
  Tensor out({m, n}, std::move(out_v), needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od, start, m, n, c]() {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ad->grad[i * c + start + j] += od->grad[i * n + j];
    });
  }
  return out;
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t total = 0;
  bool needs = false;
  for (const Tensor& p : parts) {
    require_rank2(p, "concat_cols");
    require(p.rows() == m, "concat_cols: row counts differ");
    total += p.cols();
    needs = needs || p.requires_grad();
  }
  std::vector<double> out_v(m * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t n = p.cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.values().data() + i * n, n, out_v.data() + i * total + off);
    off += n;
  }
  Tensor out({m, total}, std::move(out_v), needs);
  if (needs) {
    std::vector<std::shared_ptr<TensorData>> pd;
    pd.reserve(parts.size());
    for (const Tensor& p : parts) pd.push_back(p.data());
    auto od = out.data();
    tape.record([pd, od, m, total]() {
      std::size_t off2 = 0;
      for (const auto& p : pd) {
        const std::size_t n = p->shape.size() >= 2 ? p->shape[1] : p->shape[0];
        if (p->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              p->grad[i * n + j] += od->grad[i * total + off2 + j];
        off2 += n;
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const bool needs = a.requires_grad();
  Tensor out = Tensor::scalar(s, needs);
  if (needs) {
    auto ad = a.data(), od = out.data();
    tape.record([ad, od]() {
      const double g = od->grad[0];
      for (double& d : ad->grad) d += g;
    });
  }
  return out;
}

Tensor masked_cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<char>& mask) {
  require_rank2(logits, "masked_cross_entropy");
  const std::size_t m = logits.rows(), v = logits.cols();
  require(targets.size() == m, "masked_cross_entropy: target count mismatch");
  require(mask.size() == m, "masked_cross_entropy: mask length mismatch");
  std::size_t active = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    ++active;
    require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < v,
            "masked_cross_entropy: target id " + std::to_string(targets[i]) + " out of range");
  }
  if (active == 0) fail("masked_cross_entropy: empty loss support");
  // Log-probabilities for the forward value; the softmax needed by the
  // backward pass is recovered as exp(log_prob).
  auto lp = std::make_shared<std::vector<double>>(logits.values());
  kernels::log_softmax_rows_inplace(lp->data(), m, v);
  double nll = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (mask[i]) nll -= (*lp)[i * v + static_cast<std::size_t>(targets[i])];
  nll /= static_cast<double>(active);
  const bool needs = logits.requires_grad();
  Tensor out = Tensor::scalar(nll, needs);
  if (needs) {
    auto ld = logits.data(), od = out.data();
    tape.record([ld, od, lp, targets, mask, m, v, active]() {
      const double g = od->grad[0] / static_cast<double>(active);
      for (std::size_t i = 0; i < m; ++i) {
        if (!mask[i]) continue;  // masked rows get exactly zero gradient
        double* dl = ld->grad.data() + i * v;
        const double* lpi = lp->data() + i * v;
        for (std::size_t j = 0; j < v; ++j) dl[j] += g * std::exp(lpi[j]);
        dl[static_cast<std::size_t>(targets[i])] -= g;
      }
    });
  }
  return out;
}

std::size_t ctc_min_frames(const std::vector<int>& target) {
  std::size_t extra = 0;
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++extra;
  return target.size() + extra;
}

Tensor ctc_loss(Tape& tape, const Tensor& log_probs, const std::vector<int>& target) {
  require_rank2(log_probs, "ctc_loss");
  const std::size_t t_frames = log_probs.rows(), classes = log_probs.cols();
  require(t_frames >= 1, "ctc_loss: needs at least one frame");
  require(classes >= 2, "ctc_loss: needs blank plus at least one label class");
  for (int t : target)
    require(t >= 0 && static_cast<std::size_t>(t) + 1 < classes,
            "ctc_loss: token id " + std::to_string(t) + " out of range");
  const std::size_t need = ctc_min_frames(target);
  if (t_frames < need)
    fail("ctc_loss: target longer than input (needs " + std::to_string(need) + " frames, got " +
         std::to_string(t_frames) + ")");

  // Extended label sequence: blanks interleaved around each token, with
  // token id t emitted from class t+1 (class 0 is the blank).
  const std::size_t s_len = 2 * target.size() + 1;
  std::vector<std::size_t> z(s_len, 0);
  for (std::size_t i = 0; i < target.size(); ++i)
    z[2 * i + 1] = static_cast<std::size_t>(target[i]) + 1;

  const double* lp = log_probs.values().data();
  auto at = [&](std::size_t t, std::size_t k) { return lp[t * classes + k]; };
  auto skip_from = [&](std::size_t s) {
    // A jump s-2 -> s is legal only onto a label state that differs from the
    // label two slots back (otherwise the blank between them is mandatory).
    return s >= 2 && z[s] != 0 && z[s] != z[s - 2];
  };

  auto alpha = std::make_shared<std::vector<double>>(t_frames * s_len, kNegInf);
  (*alpha)[0] = at(0, z[0]);
  if (s_len > 1) (*alpha)[1] = at(0, z[1]);
  for (std::size_t t = 1; t < t_frames; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double acc = (*alpha)[(t - 1) * s_len + s];
      if (s >= 1) acc = kernels::log_add(acc, (*alpha)[(t - 1) * s_len + s - 1]);
      if (skip_from(s)) acc = kernels::log_add(acc, (*alpha)[(t - 1) * s_len + s - 2]);
      (*alpha)[t * s_len + s] = acc == kNegInf ? kNegInf : acc + at(t, z[s]);
    }
  }
  double log_p = (*alpha)[(t_frames - 1) * s_len + s_len - 1];
  if (s_len > 1)
    log_p = kernels::log_add(log_p, (*alpha)[(t_frames - 1) * s_len + s_len - 2]);
  require(log_p != kNegInf, "ctc_loss: no feasible alignment");

  const bool needs = log_probs.requires_grad();
  Tensor out = Tensor::scalar(-log_p, needs);
  if (needs) {
    auto ld = log_probs.data(), od = out.data();
    tape.record([ld, od, alpha, z, t_frames, s_len, classes, log_p]() {
      auto skip_ok = [&z](std::size_t s) { return s >= 2 && z[s] != 0 && z[s] != z[s - 2]; };
      // beta[t][s]: log-probability of completing the alignment from state s
      // given frames after t (the emission at t itself is excluded, so
      // alpha + beta sums to log_p at every frame).
      std::vector<double> beta(t_frames * s_len, kNegInf);
      beta[(t_frames - 1) * s_len + s_len - 1] = 0.0;
      if (s_len > 1) beta[(t_frames - 1) * s_len + s_len - 2] = 0.0;
      const double* lpv = ld->values.data();
      for (std::size_t t = t_frames - 1; t-- > 0;) {
        for (std::size_t s = 0; s < s_len; ++s) {
          double acc = beta[(t + 1) * s_len + s] + lpv[(t + 1) * classes + z[s]];
          if (s + 1 < s_len)
            acc = kernels::log_add(
                acc, beta[(t + 1) * s_len + s + 1] + lpv[(t + 1) * classes + z[s + 1]]);
          if (s + 2 < s_len && skip_ok(s + 2))
            acc = kernels::log_add(
                acc, beta[(t + 1) * s_len + s + 2] + lpv[(t + 1) * classes + z[s + 2]]);
          beta[t * s_len + s] = acc;
        }
      }
      const double g = od->grad[0];
      for (std::size_t t = 0; t < t_frames; ++t) {
        // occupancy[k] = log sum over states with label k of alpha + beta
        std::vector<double> occupancy(classes, kNegInf);
        for (std::size_t s = 0; s < s_len; ++s) {
          const double a = (*alpha)[t * s_len + s];
          if (a == kNegInf) continue;
          const double b = beta[t * s_len + s];
          if (b == kNegInf) continue;
          occupancy[z[s]] = kernels::log_add(occupancy[z[s]], a + b);
        }
        double* dl = ld->grad.data() + t * classes;
        for (std::size_t k = 0; k < classes; ++k)
          if (occupancy[k] != kNegInf) dl[k] -= g * std::exp(occupancy[k] - log_p);
      }
    });
  }
  return out;
}

double gradient_check(const std::function<Tensor(Tape&, Tensor&)>& f, const Tensor& x, double h) {
  Tensor xg(x.shape(), x.values(), true);
  Tape tape;
  Tensor loss = f(tape, xg);
  tape.backward(loss);
  const std::vector<double> analytic = xg.grad();

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto eval = [&](double delta) {
      Tensor xs(x.shape(), x.values(), true);
      xs.values()[i] += delta;
      Tape t2;
      Tensor l = f(t2, xs);
      return l.value();
    };
    const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
    const double rel =
        std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace ctxst
