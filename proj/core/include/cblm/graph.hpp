#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "cblm/errors.hpp"
#include "cblm/tensor.hpp"

namespace cblm {

// Reverse-mode tape over small dense tensors. Every op computes its value
// eagerly and records a closure that routes adjoints to its parents; the
// closure takes the graph by reference, so Graph objects stay movable.
template <typename S>
class Graph {
 public:
  int leaf(Tensor<S> value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, nullptr);
  }

  // Parameter input; backward adds this node's adjoint into p.grad.
  int param(Param<S>& p) {
    Param<S>* ptr = &p;
    return push(p.value, true, [ptr](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      for (std::size_t i = 0; i < gr.size(); ++i) ptr->grad.v[i] += gr.v[i];
    });
  }

  // out[r, :] = table[ids[r], :]
  int gather_rows(int table, const std::vector<int>& ids) {
    const Tensor<S>& t = val(table);
    Tensor<S> out(static_cast<int>(ids.size()), t.cols);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      const S* src = t.row(ids[r]);
      std::copy(src, src + t.cols, out.row(static_cast<int>(r)));
    }
    int id = push(std::move(out), needs(table), [table, ids](Graph& g, int self) {
      if (!g.needs(table)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& pg = g.grad_acc(table);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        const S* src = gr.row(static_cast<int>(r));
        S* dst = pg.row(ids[r]);
        for (int c = 0; c < gr.cols; ++c) dst[c] += src[c];
      }
    });
    return id;
  }

  int add(int a, int b) {
    const Tensor<S>& ta = val(a);
    const Tensor<S>& tb = val(b);
    check(ta.same_shape(tb), "add: shape mismatch");
    Tensor<S> out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      if (g.needs(a)) {
        Tensor<S>& ga = g.grad_acc(a);
        for (std::size_t i = 0; i < gr.size(); ++i) ga.v[i] += gr.v[i];
      }
      if (g.needs(b)) {
        Tensor<S>& gb = g.grad_acc(b);
        for (std::size_t i = 0; i < gr.size(); ++i) gb.v[i] += gr.v[i];
      }
    });
  }

  int scale(int a, S s) {
    Tensor<S> out = val(a);
    for (auto& x : out.v) x *= s;
    return push(std::move(out), needs(a), [a, s](Graph& g, int self) {
      if (!g.needs(a)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& ga = g.grad_acc(a);
      for (std::size_t i = 0; i < gr.size(); ++i) ga.v[i] += s * gr.v[i];
    });
  }

  // out[i, j] = mat[i, j] * col[i, 0]
  int row_scale(int mat, int col) {
    const Tensor<S>& m = val(mat);
    const Tensor<S>& c = val(col);
    check(c.cols == 1 && c.rows == m.rows, "row_scale: column mismatch");
    Tensor<S> out = m;
    for (int r = 0; r < m.rows; ++r) {
      S s = c.at(r, 0);
      S* o = out.row(r);
      for (int j = 0; j < m.cols; ++j) o[j] *= s;
    }
    return push(std::move(out), needs(mat) || needs(col), [mat, col](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      const Tensor<S>& m = g.val(mat);
      const Tensor<S>& c = g.val(col);
      if (g.needs(mat)) {
        Tensor<S>& gm = g.grad_acc(mat);
        for (int r = 0; r < m.rows; ++r) {
          S s = c.at(r, 0);
          const S* gro = gr.row(r);
          S* dst = gm.row(r);
          for (int j = 0; j < m.cols; ++j) dst[j] += s * gro[j];
        }
      }
      if (g.needs(col)) {
        Tensor<S>& gc = g.grad_acc(col);
        for (int r = 0; r < m.rows; ++r) {
          const S* gro = gr.row(r);
          const S* mr = m.row(r);
          S dot = S(0);
          for (int j = 0; j < m.cols; ++j) dot += gro[j] * mr[j];
          gc.at(r, 0) += dot;
        }
      }
    });
  }

  // y = x * w^T; x (n x in), w (out x in) -> y (n x out)
  int linear_nt(int x, int w) {
    const Tensor<S>& tx = val(x);
    const Tensor<S>& tw = val(w);
    check(tx.cols == tw.cols, "linear_nt: inner dim mismatch");
    Tensor<S> out(tx.rows, tw.rows);
    for (int r = 0; r < tx.rows; ++r) {
      const S* xr = tx.row(r);
      S* orow = out.row(r);
      for (int o = 0; o < tw.rows; ++o) {
        const S* wr = tw.row(o);
        S acc = S(0);
        for (int i = 0; i < tx.cols; ++i) acc += xr[i] * wr[i];
        orow[o] = acc;
      }
    }
    return push(std::move(out), needs(x) || needs(w), [x, w](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      const Tensor<S>& tx = g.val(x);
      const Tensor<S>& tw = g.val(w);
      if (g.needs(x)) {
        Tensor<S>& gx = g.grad_acc(x);
        for (int r = 0; r < tx.rows; ++r) {
          const S* gro = gr.row(r);
          S* dst = gx.row(r);
          for (int o = 0; o < tw.rows; ++o) {
            S s = gro[o];
            if (s == S(0)) continue;
            const S* wr = tw.row(o);
            for (int i = 0; i < tx.cols; ++i) dst[i] += s * wr[i];
          }
        }
      }
      if (g.needs(w)) {
        Tensor<S>& gw = g.grad_acc(w);
        for (int r = 0; r < tx.rows; ++r) {
          const S* gro = gr.row(r);
          const S* xr = tx.row(r);
          for (int o = 0; o < tw.rows; ++o) {
            S s = gro[o];
            if (s == S(0)) continue;
            S* dst = gw.row(o);
            for (int i = 0; i < tx.cols; ++i) dst[i] += s * xr[i];
          }
        }
      }
    });
  }

  // b is (1 x n), broadcast over rows of x.
  int bias_add(int x, int b) {
    const Tensor<S>& tx = val(x);
    const Tensor<S>& tb = val(b);
    check(tb.rows == 1 && tb.cols == tx.cols, "bias_add: shape mismatch");
    Tensor<S> out = tx;
    for (int r = 0; r < tx.rows; ++r) {
      S* orow = out.row(r);
      for (int c = 0; c < tx.cols; ++c) orow[c] += tb.v[static_cast<std::size_t>(c)];
    }
    return push(std::move(out), needs(x) || needs(b), [x, b](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      if (g.needs(x)) {
        Tensor<S>& gx = g.grad_acc(x);
        for (std::size_t i = 0; i < gr.size(); ++i) gx.v[i] += gr.v[i];
      }
      if (g.needs(b)) {
        Tensor<S>& gb = g.grad_acc(b);
        for (int r = 0; r < gr.rows; ++r) {
          const S* gro = gr.row(r);
          for (int c = 0; c < gr.cols; ++c) gb.v[static_cast<std::size_t>(c)] += gro[c];
        }
      }
    });
  }

  // Row-wise layer norm with affine parameters gamma, beta (1 x d).
  int layer_norm(int x, int gamma, int beta, S eps) {
    const Tensor<S>& tx = val(x);
    const Tensor<S>& tg = val(gamma);
    const Tensor<S>& tb = val(beta);
    check(tg.cols == tx.cols && tb.cols == tx.cols, "layer_norm: width mismatch");
    auto xhat = std::make_shared<Tensor<S>>(tx.rows, tx.cols);
    auto inv_sigma = std::make_shared<std::vector<S>>(static_cast<std::size_t>(tx.rows));
    Tensor<S> out(tx.rows, tx.cols);
    int d = tx.cols;
    for (int r = 0; r < tx.rows; ++r) {
      const S* xr = tx.row(r);
      S mu = S(0);
      for (int c = 0; c < d; ++c) mu += xr[c];
      mu /= S(d);
      S var = S(0);
      for (int c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= S(d);
      S isg = S(1) / std::sqrt(var + eps);
      (*inv_sigma)[static_cast<std::size_t>(r)] = isg;
      S* xh = xhat->row(r);
      S* orow = out.row(r);
      for (int c = 0; c < d; ++c) {
        xh[c] = (xr[c] - mu) * isg;
        orow[c] = tg.v[static_cast<std::size_t>(c)] * xh[c] + tb.v[static_cast<std::size_t>(c)];
      }
    }
    return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                [x, gamma, beta, xhat, inv_sigma](Graph& g, int self) {
                  const Tensor<S>& gr = g.grad_ref(self);
                  const Tensor<S>& tg = g.val(gamma);
                  int d = gr.cols;
                  if (g.needs(gamma)) {
                    Tensor<S>& gg = g.grad_acc(gamma);
                    for (int r = 0; r < gr.rows; ++r) {
                      const S* gro = gr.row(r);
                      const S* xh = xhat->row(r);
                      for (int c = 0; c < d; ++c) gg.v[static_cast<std::size_t>(c)] += gro[c] * xh[c];
                    }
                  }
                  if (g.needs(beta)) {
                    Tensor<S>& gb = g.grad_acc(beta);
                    for (int r = 0; r < gr.rows; ++r) {
                      const S* gro = gr.row(r);
                      for (int c = 0; c < d; ++c) gb.v[static_cast<std::size_t>(c)] += gro[c];
                    }
                  }
                  if (g.needs(x)) {
                    Tensor<S>& gx = g.grad_acc(x);
                    for (int r = 0; r < gr.rows; ++r) {
                      const S* gro = gr.row(r);
                      const S* xh = xhat->row(r);
                      S isg = (*inv_sigma)[static_cast<std::size_t>(r)];
                      S mean_gy = S(0), mean_gyx = S(0);
                      for (int c = 0; c < d; ++c) {
                        S gy = gro[c] * tg.v[static_cast<std::size_t>(c)];
                        mean_gy += gy;
                        mean_gyx += gy * xh[c];
                      }
                      mean_gy /= S(d);
                      mean_gyx /= S(d);
                      S* dst = gx.row(r);
                      for (int c = 0; c < d; ++c) {
                        S gy = gro[c] * tg.v[static_cast<std::size_t>(c)];
                        dst[c] += (gy - mean_gy - xh[c] * mean_gyx) * isg;
                      }
                    }
                  }
                });
  }

  int gelu(int x) {
    const Tensor<S>& tx = val(x);
    Tensor<S> out(tx.rows, tx.cols);
    for (std::size_t i = 0; i < tx.size(); ++i) {
      S v = tx.v[i];
      out.v[i] = S(0.5) * v * (S(1) + std::erf(v / S(std::sqrt(2.0))));
    }
    return push(std::move(out), needs(x), [x](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      const Tensor<S>& tx = g.val(x);
      Tensor<S>& gx = g.grad_acc(x);
      const S inv_sqrt2 = S(1) / S(std::sqrt(2.0));
      const S inv_sqrt2pi = S(1) / S(std::sqrt(2.0 * M_PI));
      for (std::size_t i = 0; i < tx.size(); ++i) {
        S v = tx.v[i];
        S cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
        S pdf = std::exp(S(-0.5) * v * v) * inv_sqrt2pi;
        gx.v[i] += gr.v[i] * (cdf + v * pdf);
      }
    });
  }

  // Multi-head self-attention over a fused qkv input (T x 3d) with rotary
  // position embeddings on q and k. Column layout: [Q | K | V], each head h
  // using columns h*dh .. (h+1)*dh of its block. Causal masks j > i.
  int attention(int qkv, int heads, S rope_base, bool causal) {
    const Tensor<S>& in = val(qkv);
    check(in.cols % 3 == 0, "attention: qkv width not divisible by 3");
    int d = in.cols / 3;
    check(d % heads == 0, "attention: d not divisible by heads");
    int dh = d / heads;
    check(dh % 2 == 0, "attention: head dim must be even for rotary pairs");
    check(dh <= 512, "attention: head dim too large");
    int T = in.rows;

    auto rotate = [dh, rope_base](const S* src, S* dst, int pos, bool inverse) {
      for (int j = 0; j < dh / 2; ++j) {
        S theta = std::pow(rope_base, S(-2.0 * j / dh));
        S ang = S(pos) * theta;
        S c = std::cos(ang);
        S s = std::sin(ang);
        if (inverse) s = -s;
        S a = src[2 * j], b = src[2 * j + 1];
        dst[2 * j] = a * c - b * s;
        dst[2 * j + 1] = a * s + b * c;
      }
    };

    auto qr = std::make_shared<std::vector<Tensor<S>>>();
    auto kr = std::make_shared<std::vector<Tensor<S>>>();
    auto probs = std::make_shared<std::vector<Tensor<S>>>();
    Tensor<S> out(T, d);
    S inv_scale = S(1) / std::sqrt(S(dh));

    for (int h = 0; h < heads; ++h) {
      Tensor<S> q(T, dh), k(T, dh);
      for (int i = 0; i < T; ++i) {
        rotate(in.row(i) + h * dh, q.row(i), i, false);
        rotate(in.row(i) + d + h * dh, k.row(i), i, false);
      }
      Tensor<S> a(T, T);
      for (int i = 0; i < T; ++i) {
        int limit = causal ? i + 1 : T;
        const S* qi = q.row(i);
        S maxs = -std::numeric_limits<S>::infinity();
        S* arow = a.row(i);
        for (int j = 0; j < limit; ++j) {
          const S* kj = k.row(j);
          S s = S(0);
          for (int c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          arow[j] = s;
          maxs = std::max(maxs, s);
        }
        S denom = S(0);
        for (int j = 0; j < limit; ++j) {
          arow[j] = std::exp(arow[j] - maxs);
          denom += arow[j];
        }
        for (int j = 0; j < limit; ++j) arow[j] /= denom;
        for (int j = limit; j < T; ++j) arow[j] = S(0);
      }
      for (int i = 0; i < T; ++i) {
        const S* arow = a.row(i);
        S* orow = out.row(i) + h * dh;
        int limit = causal ? i + 1 : T;
        for (int j = 0; j < limit; ++j) {
          S w = arow[j];
          if (w == S(0)) continue;
          const S* vj = in.row(j) + 2 * d + h * dh;
          for (int c = 0; c < dh; ++c) orow[c] += w * vj[c];
        }
      }
      qr->push_back(std::move(q));
      kr->push_back(std::move(k));
      probs->push_back(std::move(a));
    }

    return push(std::move(out), needs(qkv),
                [qkv, heads, rope_base, causal, qr, kr, probs, rotate, inv_scale, d, dh,
                 T](Graph& g, int self) {
                  if (!g.needs(qkv)) return;
                  const Tensor<S>& gr = g.grad_ref(self);
                  const Tensor<S>& in = g.val(qkv);
                  Tensor<S>& gin = g.grad_acc(qkv);
                  for (int h = 0; h < heads; ++h) {
                    const Tensor<S>& q = (*qr)[static_cast<std::size_t>(h)];
                    const Tensor<S>& k = (*kr)[static_cast<std::size_t>(h)];
                    const Tensor<S>& a = (*probs)[static_cast<std::size_t>(h)];
                    Tensor<S> ds(T, T);
                    // dv and da
                    for (int i = 0; i < T; ++i) {
                      const S* go = gr.row(i) + h * dh;
                      const S* arow = a.row(i);
                      int limit = causal ? i + 1 : T;
                      S* dsrow = ds.row(i);
                      S dot_sum = S(0);
                      for (int j = 0; j < limit; ++j) {
                        // dv_j += a_ij * go
                        S w = arow[j];
                        S* gv = gin.row(j) + 2 * d + h * dh;
                        const S* vj = in.row(j) + 2 * d + h * dh;
                        S da = S(0);
                        for (int c = 0; c < dh; ++c) {
                          gv[c] += w * go[c];
                          da += go[c] * vj[c];
                        }
                        dsrow[j] = da;
                        dot_sum += w * da;
                      }
                      for (int j = 0; j < limit; ++j) {
                        dsrow[j] = arow[j] * (dsrow[j] - dot_sum);
                      }
                    }
                    // dq, dk through the scaled dot product, then unrotate
                    Tensor<S> dq(T, dh), dk(T, dh);
                    for (int i = 0; i < T; ++i) {
                      const S* dsrow = ds.row(i);
                      S* dqi = dq.row(i);
                      int limit = causal ? i + 1 : T;
                      for (int j = 0; j < limit; ++j) {
                        S s = dsrow[j] * inv_scale;
                        if (s == S(0)) continue;
                        const S* kj = k.row(j);
                        const S* qi = q.row(i);
                        S* dkj = dk.row(j);
                        for (int c = 0; c < dh; ++c) {
                          dqi[c] += s * kj[c];
                          dkj[c] += s * qi[c];
                        }
                      }
                    }
                    for (int i = 0; i < T; ++i) {
                      S tmp[512];
                      rotate(dq.row(i), tmp, i, true);
                      S* dst = gin.row(i) + h * dh;
                      for (int c = 0; c < dh; ++c) dst[c] += tmp[c];
                      rotate(dk.row(i), tmp, i, true);
                      dst = gin.row(i) + d + h * dh;
                      for (int c = 0; c < dh; ++c) dst[c] += tmp[c];
                    }
                  }
                });
  }

  int pick_row(int x, int r) {
    const Tensor<S>& tx = val(x);
    Tensor<S> out(1, tx.cols);
    std::copy(tx.row(r), tx.row(r) + tx.cols, out.row(0));
    return push(std::move(out), needs(x), [x, r](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      S* dst = gx.row(r);
      for (int c = 0; c < gr.cols; ++c) dst[c] += gr.v[static_cast<std::size_t>(c)];
    });
  }

  int pick(int x, int r, int c) {
    const Tensor<S>& tx = val(x);
    Tensor<S> out(1, 1);
    out.v[0] = tx.at(r, c);
    return push(std::move(out), needs(x), [x, r, c](Graph& g, int self) {
      if (!g.needs(x)) return;
      g.grad_acc(x).at(r, c) += g.grad_ref(self).v[0];
    });
  }

  int mean_rows(int x, const std::vector<int>& rows) {
    const Tensor<S>& tx = val(x);
    check(!rows.empty(), "mean_rows: empty row set");
    Tensor<S> out(1, tx.cols);
    for (int r : rows) {
      const S* src = tx.row(r);
      for (int c = 0; c < tx.cols; ++c) out.v[static_cast<std::size_t>(c)] += src[c];
    }
    S inv = S(1) / S(rows.size());
    for (auto& v : out.v) v *= inv;
    return push(std::move(out), needs(x), [x, rows, inv](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      for (int r : rows) {
        S* dst = gx.row(r);
        for (int c = 0; c < gr.cols; ++c) dst[c] += inv * gr.v[static_cast<std::size_t>(c)];
      }
    });
  }

  // (r x c) -> (1 x r*c), row-major flatten.
  int reshape_row(int x) {
    const Tensor<S>& tx = val(x);
    Tensor<S> out(1, static_cast<int>(tx.size()));
    out.v = tx.v;
    return push(std::move(out), needs(x), [x](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      for (std::size_t i = 0; i < gr.size(); ++i) gx.v[i] += gr.v[i];
    });
  }

  // (1 x n) -> (1 x m): zero-pad when m > n, truncate when m < n.
  int pad_cols(int x, int m) {
    const Tensor<S>& tx = val(x);
    check(tx.rows == 1, "pad_cols: expects a row vector");
    Tensor<S> out(1, m);
    int n = std::min(m, tx.cols);
    std::copy(tx.v.begin(), tx.v.begin() + n, out.v.begin());
    return push(std::move(out), needs(x), [x, n](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      for (int i = 0; i < n; ++i) gx.v[static_cast<std::size_t>(i)] += gr.v[static_cast<std::size_t>(i)];
    });
  }

  int broadcast_row(int x, int n) {
    const Tensor<S>& tx = val(x);
    check(tx.rows == 1, "broadcast_row: expects a row vector");
    Tensor<S> out(n, tx.cols);
    for (int r = 0; r < n; ++r) std::copy(tx.v.begin(), tx.v.end(), out.row(r));
    return push(std::move(out), needs(x), [x](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      for (int r = 0; r < gr.rows; ++r) {
        const S* src = gr.row(r);
        for (int c = 0; c < gr.cols; ++c) gx.v[static_cast<std::size_t>(c)] += src[c];
      }
    });
  }

  int concat_cols(int a, int b) {
    const Tensor<S>& ta = val(a);
    const Tensor<S>& tb = val(b);
    check(ta.rows == tb.rows, "concat_cols: row mismatch");
    Tensor<S> out(ta.rows, ta.cols + tb.cols);
    for (int r = 0; r < ta.rows; ++r) {
      std::copy(ta.row(r), ta.row(r) + ta.cols, out.row(r));
      std::copy(tb.row(r), tb.row(r) + tb.cols, out.row(r) + ta.cols);
    }
    int ac = ta.cols;
    return push(std::move(out), needs(a) || needs(b), [a, b, ac](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      if (g.needs(a)) {
        Tensor<S>& ga = g.grad_acc(a);
        for (int r = 0; r < gr.rows; ++r) {
          const S* src = gr.row(r);
          S* dst = ga.row(r);
          for (int c = 0; c < ac; ++c) dst[c] += src[c];
        }
      }
      if (g.needs(b)) {
        Tensor<S>& gb = g.grad_acc(b);
        for (int r = 0; r < gr.rows; ++r) {
          const S* src = gr.row(r) + ac;
          S* dst = gb.row(r);
          for (int c = 0; c < gr.cols - ac; ++c) dst[c] += src[c];
        }
      }
    });
  }

  int concat_rows(int a, int b) {
    const Tensor<S>& ta = val(a);
    const Tensor<S>& tb = val(b);
    check(ta.cols == tb.cols, "concat_rows: column mismatch");
    Tensor<S> out(ta.rows + tb.rows, ta.cols);
    std::copy(ta.v.begin(), ta.v.end(), out.v.begin());
    std::copy(tb.v.begin(), tb.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(ta.size()));
    int arows = ta.rows;
    return push(std::move(out), needs(a) || needs(b), [a, b, arows](Graph& g, int self) {
      const Tensor<S>& gr = g.grad_ref(self);
      if (g.needs(a)) {
        Tensor<S>& ga = g.grad_acc(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.v[i] += gr.v[i];
      }
      if (g.needs(b)) {
        Tensor<S>& gb = g.grad_acc(b);
        std::size_t off = static_cast<std::size_t>(arows) * gr.cols;
        for (std::size_t i = 0; i < gb.size(); ++i) gb.v[i] += gr.v[off + i];
      }
    });
  }

  int slice_rows(int x, int r0, int r1) {
    const Tensor<S>& tx = val(x);
    check(0 <= r0 && r0 <= r1 && r1 <= tx.rows, "slice_rows: bad range");
    Tensor<S> out(r1 - r0, tx.cols);
    std::copy(tx.row(r0), tx.row(r0) + out.size(), out.v.begin());
    return push(std::move(out), needs(x), [x, r0](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      S* dst = gx.row(r0);
      for (std::size_t i = 0; i < gr.size(); ++i) dst[i] += gr.v[i];
    });
  }

  int slice_cols(int x, int c0, int c1) {
    const Tensor<S>& tx = val(x);
    check(0 <= c0 && c0 <= c1 && c1 <= tx.cols, "slice_cols: bad range");
    Tensor<S> out(tx.rows, c1 - c0);
    for (int r = 0; r < tx.rows; ++r) {
      std::copy(tx.row(r) + c0, tx.row(r) + c1, out.row(r));
    }
    return push(std::move(out), needs(x), [x, c0](Graph& g, int self) {
      if (!g.needs(x)) return;
      const Tensor<S>& gr = g.grad_ref(self);
      Tensor<S>& gx = g.grad_acc(x);
      for (int r = 0; r < gr.rows; ++r) {
        const S* src = gr.row(r);
        S* dst = gx.row(r) + c0;
        for (int c = 0; c < gr.cols; ++c) dst[c] += src[c];
      }
    });
  }

  // Mean cross-entropy over (position, target-token) pairs against row-wise
  // softmax of the logits. Used for both masked-LM and next-token losses.
  int cross_entropy(int logits, const std::vector<std::pair<int, int>>& targets) {
    if (targets.empty()) throw EmptyLossError("cross_entropy: no target positions");
    const Tensor<S>& tl = val(logits);
    auto saved = std::make_shared<Tensor<S>>(static_cast<int>(targets.size()), tl.cols);
    S total = S(0);
    for (std::size_t p = 0; p < targets.size(); ++p) {
      const S* lr = tl.row(targets[p].first);
      S mx = lr[0];
      for (int c = 1; c < tl.cols; ++c) mx = std::max(mx, lr[c]);
      S denom = S(0);
      S* pr = saved->row(static_cast<int>(p));
      for (int c = 0; c < tl.cols; ++c) {
        pr[c] = std::exp(lr[c] - mx);
        denom += pr[c];
      }
      for (int c = 0; c < tl.cols; ++c) pr[c] /= denom;
      total += -(std::log(pr[targets[p].second]));
    }
    Tensor<S> out(1, 1);
    out.v[0] = total / S(targets.size());
    return push(std::move(out), needs(logits), [logits, targets, saved](Graph& g, int self) {
      if (!g.needs(logits)) return;
      S go = g.grad_ref(self).v[0];
      Tensor<S>& gl = g.grad_acc(logits);
      S inv = go / S(targets.size());
      for (std::size_t p = 0; p < targets.size(); ++p) {
        const S* pr = saved->row(static_cast<int>(p));
        S* dst = gl.row(targets[p].first);
        for (int c = 0; c < gl.cols; ++c) dst[c] += inv * pr[c];
        dst[targets[p].second] -= inv;
      }
    });
  }

  // Mean squared error over observed entries of a (1 x k) prediction; zero
  // (with zero gradient) when nothing is observed.
  int mse_masked(int pred, const std::vector<S>& target, const std::vector<char>& observed) {
    const Tensor<S>& tp = val(pred);
    check(tp.rows == 1 && static_cast<std::size_t>(tp.cols) == target.size() &&
              target.size() == observed.size(),
          "mse_masked: shape mismatch");
    int count = 0;
    S total = S(0);
    for (std::size_t i = 0; i < target.size(); ++i) {
      if (!observed[i]) continue;
      S d = tp.v[i] - target[i];
      total += d * d;
      ++count;
    }
    Tensor<S> out(1, 1);
    out.v[0] = count > 0 ? total / S(count) : S(0);
    return push(std::move(out), needs(pred), [pred, target, observed, count](Graph& g, int self) {
      if (!g.needs(pred) || count == 0) return;
      S go = g.grad_ref(self).v[0];
      const Tensor<S>& tp = g.val(pred);
      Tensor<S>& gp = g.grad_acc(pred);
      for (std::size_t i = 0; i < target.size(); ++i) {
        if (!observed[i]) continue;
        gp.v[i] += go * S(2) * (tp.v[i] - target[i]) / S(count);
      }
    });
  }

  // Mean over the given rows of |cos(u, v_row)|; pairs with near-zero norm
  // product contribute zero with zero gradient.
  int cos_orth(int u, int vmat, const std::vector<int>& rows, S eps) {
    const Tensor<S>& tu = val(u);
    const Tensor<S>& tv = val(vmat);
    check(tu.rows == 1 && tu.cols == tv.cols, "cos_orth: dimension mismatch");
    check(!rows.empty(), "cos_orth: empty row set");
    int d = tu.cols;
    S nu = S(0);
    for (int c = 0; c < d; ++c) nu += tu.v[static_cast<std::size_t>(c)] * tu.v[static_cast<std::size_t>(c)];
    nu = std::sqrt(nu);
    auto coss = std::make_shared<std::vector<S>>();
    S total = S(0);
    for (int r : rows) {
      const S* vr = tv.row(r);
      S nv = S(0), dot = S(0);
      for (int c = 0; c < d; ++c) {
        nv += vr[c] * vr[c];
        dot += tu.v[static_cast<std::size_t>(c)] * vr[c];
      }
      nv = std::sqrt(nv);
      S den = nu * nv;
      S cval = den > eps ? dot / den : S(0);
      coss->push_back(cval);
      total += std::abs(cval);
    }
    Tensor<S> out(1, 1);
    out.v[0] = total / S(rows.size());
    return push(std::move(out), needs(u) || needs(vmat),
                [u, vmat, rows, eps, nu, coss](Graph& g, int self) {
                  S go = g.grad_ref(self).v[0] / S(rows.size());
                  const Tensor<S>& tu = g.val(u);
                  const Tensor<S>& tv = g.val(vmat);
                  int d = tu.cols;
                  for (std::size_t idx = 0; idx < rows.size(); ++idx) {
                    int r = rows[idx];
                    S cval = (*coss)[idx];
                    if (cval == S(0)) continue;
                    const S* vr = tv.row(r);
                    S nv = S(0), dot = S(0);
                    for (int c = 0; c < d; ++c) {
                      nv += vr[c] * vr[c];
                      dot += tu.v[static_cast<std::size_t>(c)] * vr[c];
                    }
                    nv = std::sqrt(nv);
                    S den = nu * nv;
                    if (den <= eps) continue;
                    S sgn = cval >= S(0) ? S(1) : S(-1);
                    S w = go * sgn;
                    if (g.needs(u)) {
                      Tensor<S>& gu = g.grad_acc(u);
                      for (int c = 0; c < d; ++c) {
                        gu.v[static_cast<std::size_t>(c)] +=
                            w * (vr[c] / den - cval * tu.v[static_cast<std::size_t>(c)] / (nu * nu));
                      }
                    }
                    if (g.needs(vmat)) {
                      Tensor<S>& gv = g.grad_acc(vmat);
                      S* dst = gv.row(r);
                      for (int c = 0; c < d; ++c) {
                        dst[c] += w * (tu.v[static_cast<std::size_t>(c)] / den - cval * vr[c] / (nv * nv));
                      }
                    }
                  }
                });
  }

  // --- access ---

  const Tensor<S>& val(int node) const { return nodes_[static_cast<std::size_t>(node)].value; }
  bool needs(int node) const { return nodes_[static_cast<std::size_t>(node)].needs_grad; }

  // Gradient of the last backward() target with respect to this node; zero
  // tensor if the node never received an adjoint.
  const Tensor<S>& grad(int node) {
    return grad_acc(node);
  }

  void backward(int node) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    check(n.value.rows == 1 && n.value.cols == 1, "backward: target must be scalar");
    grad_acc(node).v[0] = S(1);
    for (int i = node; i >= 0; --i) {
      Node& cur = nodes_[static_cast<std::size_t>(i)];
      if (!cur.back || cur.grad.empty()) continue;
      cur.back(*this, i);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool needs_grad = false;
    std::function<void(Graph&, int)> back;
  };

  static void check(bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  }

  Tensor<S>& grad_acc(int node) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.empty()) n.grad = Tensor<S>::zeros(n.value.rows, n.value.cols);
    return n.grad;
  }

  const Tensor<S>& grad_ref(int node) const { return nodes_[static_cast<std::size_t>(node)].grad; }

  int push(Tensor<S> value, bool needs_grad, std::function<void(Graph&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace cblm
