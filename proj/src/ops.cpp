#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cfmn {

int conv_out_extent(int in, int kernel, int stride, int padding, const char* where) {
    int padded = in + 2 * padding - kernel;
    int out = padded < 0 ? 0 : padded / stride + 1;
    if (out < 1)
        throw ConfigError(std::string(where) + ": output extent " + std::to_string(out) +
                          " from input " + std::to_string(in) + ", kernel " +
                          std::to_string(kernel) + ", stride " + std::to_string(stride) +
                          ", padding " + std::to_string(padding));
    return out;
}

namespace ops {
namespace {

// C[MxN] += or = A[MxK] * B[KxN]
void gemm_nn(const real* a, const real* b, real* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, real(0));
    for (int i = 0; i < m; ++i) {
        const real* arow = a + static_cast<size_t>(i) * k;
        real* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            real av = arow[p];
            const real* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[MxN] += A[MxK] * B[NxK]^T
void gemm_nt(const real* a, const real* b, real* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(m) * n, real(0));
    for (int i = 0; i < m; ++i) {
        const real* arow = a + static_cast<size_t>(i) * k;
        real* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const real* brow = b + static_cast<size_t>(j) * k;
            real acc = 0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[KxN] += A[MxK]^T * B[MxN]
void gemm_tn(const real* a, const real* b, real* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<size_t>(k) * n, real(0));
    for (int i = 0; i < m; ++i) {
        const real* arow = a + static_cast<size_t>(i) * k;
        const real* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            real av = arow[p];
            real* crow = c + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         t.shape_str());
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_rank(av, 2, "matmul");
    require_rank(bv, 2, "matmul");
    const int m = av.extent(0), k = av.extent(1), n = bv.extent(1);
    if (bv.extent(0) != k)
        throw ShapeError("matmul: inner extents disagree, " + av.shape_str() + " x " +
                         bv.shape_str());
    Tensor out({m, n});
    gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, k, n, true);
    return t.emit(std::move(out), {a, b},
                  [a, b, m, k, n](Tape& tp, const Tensor& go) {
                      if (tp.needs_grad(a))
                          gemm_nt(go.ptr(), tp.val(b).ptr(), tp.grad(a).ptr(), m, n, k, true);
                      if (tp.needs_grad(b))
                          gemm_tn(tp.val(a).ptr(), go.ptr(), tp.grad(b).ptr(), m, k, n, true);
                  },
                  "matmul");
}

Var transpose(Tape& t, Var a) {
    const Tensor& av = t.val(a);
    require_rank(av, 2, "transpose");
    const int r = av.extent(0), c = av.extent(1);
    Tensor out({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
    return t.emit(std::move(out), {a},
                  [a, r, c](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(a)) return;
                      Tensor& ga = tp.grad(a);
                      for (int i = 0; i < r; ++i)
                          for (int j = 0; j < c; ++j) ga.at(i, j) += go.at(j, i);
                  },
                  "transpose");
}

Var row_softmax(Tape& t, Var m) {
    const Tensor& x = t.val(m);
    require_rank(x, 2, "row_softmax");
    const int rows = x.extent(0), cols = x.extent(1);
    Tensor out(x.shape);
    for (int i = 0; i < rows; ++i) {
        const real* xr = x.ptr() + static_cast<size_t>(i) * cols;
        real* yr = out.ptr() + static_cast<size_t>(i) * cols;
        real mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        real sum = 0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < cols; ++j) yr[j] /= sum;
    }
    Tensor saved = out;
    return t.emit(std::move(out), {m},
                  [m, rows, cols, saved = std::move(saved)](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(m)) return;
                      Tensor& gm = tp.grad(m);
                      for (int i = 0; i < rows; ++i) {
                          const real* s = saved.ptr() + static_cast<size_t>(i) * cols;
                          const real* g = go.ptr() + static_cast<size_t>(i) * cols;
                          real* gx = gm.ptr() + static_cast<size_t>(i) * cols;
                          real dot = 0;
                          for (int j = 0; j < cols; ++j) dot += g[j] * s[j];
                          for (int j = 0; j < cols; ++j) gx[j] += s[j] * (g[j] - dot);
                      }
                  },
                  "row_softmax");
}

Var conv2d(Tape& t, Var input, Var kernel, Var bias, int stride, int padding, const char* where) {
    const Tensor& in = t.val(input);
    const Tensor& ker = t.val(kernel);
    const Tensor& bi = t.val(bias);
    if (in.rank() != 3 && in.rank() != 4)
        throw ShapeError(std::string(where) + ": conv input must be rank 3 or 4, got " +
                         in.shape_str());
    const bool batched = in.rank() == 4;
    require_rank(ker, 4, where);
    require_rank(bi, 1, where);
    if (ker.extent(2) != ker.extent(3))
        throw ShapeError(std::string(where) + ": kernel must be square, got " + ker.shape_str());
    const int b_count = batched ? in.extent(0) : 1;
    const int cin = in.extent(batched ? 1 : 0);
    const int h = in.extent(batched ? 2 : 1);
    const int w = in.extent(batched ? 3 : 2);
    const int cout = ker.extent(0);
    const int k = ker.extent(2);
    if (ker.extent(1) != cin)
        throw ShapeError(std::string(where) + ": kernel expects " + std::to_string(ker.extent(1)) +
                         " input channels, input has " + std::to_string(cin));
    if (bi.extent(0) != cout)
        throw ShapeError(std::string(where) + ": bias extent " + std::to_string(bi.extent(0)) +
                         " != filters " + std::to_string(cout));
    if (stride < 1) throw ConfigError(std::string(where) + ": stride must be >= 1");
    const int oh = conv_out_extent(h, k, stride, padding, where);
    const int ow = conv_out_extent(w, k, stride, padding, where);

    Tensor out(batched ? std::vector<int>{b_count, cout, oh, ow}
                       : std::vector<int>{cout, oh, ow});
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(oh) * ow;
    for (int b = 0; b < b_count; ++b) {
        const real* inb = in.ptr() + static_cast<size_t>(b) * cin * in_plane;
        real* outb = out.ptr() + static_cast<size_t>(b) * cout * out_plane;
        for (int co = 0; co < cout; ++co)
            std::fill(outb + co * out_plane, outb + (co + 1) * out_plane, bi.at(co));
        for (int ci = 0; ci < cin; ++ci) {
            const real* ip = inb + ci * in_plane;
            for (int co = 0; co < cout; ++co) {
                const real* kp = ker.ptr() + (static_cast<size_t>(co) * cin + ci) * k * k;
                real* op = outb + co * out_plane;
                for (int y = 0; y < oh; ++y) {
                    real* orow = op + static_cast<size_t>(y) * ow;
                    for (int kh = 0; kh < k; ++kh) {
                        const int ih = y * stride + kh - padding;
                        if (ih < 0 || ih >= h) continue;
                        const real* irow = ip + static_cast<size_t>(ih) * w;
                        for (int kw = 0; kw < k; ++kw) {
                            const real kv = kp[kh * k + kw];
                            if (stride == 1) {
                                const int iw0 = kw - padding;
                                const int lo = std::max(0, -iw0);
                                const int hi = std::min(ow - 1, w - 1 - iw0);
                                const real* ir = irow + iw0;
                                for (int x = lo; x <= hi; ++x) orow[x] += kv * ir[x];
                            } else {
                                for (int x = 0; x < ow; ++x) {
                                    const int iw = x * stride + kw - padding;
                                    if (iw >= 0 && iw < w) orow[x] += kv * irow[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    auto back = [input, kernel, bias, batched, b_count, cin, h, w, cout, k, oh, ow, stride,
                 padding](Tape& tp, const Tensor& go) {
        const size_t in_plane = static_cast<size_t>(h) * w;
        const size_t out_plane = static_cast<size_t>(oh) * ow;
        const Tensor& in = tp.val(input);
        const Tensor& ker = tp.val(kernel);
        const bool need_in = tp.needs_grad(input);
        const bool need_k = tp.needs_grad(kernel);
        const bool need_b = tp.needs_grad(bias);
        real* gin = need_in ? tp.grad(input).ptr() : nullptr;
        real* gker = need_k ? tp.grad(kernel).ptr() : nullptr;
        real* gbias = need_b ? tp.grad(bias).ptr() : nullptr;
        for (int b = 0; b < b_count; ++b) {
            const real* gob = go.ptr() + static_cast<size_t>(b) * cout * out_plane;
            const real* inb = in.ptr() + static_cast<size_t>(b) * cin * in_plane;
            if (need_b) {
                for (int co = 0; co < cout; ++co) {
                    const real* gp = gob + co * out_plane;
                    real acc = 0;
                    for (size_t i = 0; i < out_plane; ++i) acc += gp[i];
                    gbias[co] += acc;
                }
            }
            if (!need_in && !need_k) continue;
            for (int ci = 0; ci < cin; ++ci) {
                const real* ip = inb + ci * in_plane;
                real* gip = need_in ? gin + (static_cast<size_t>(b) * cin + ci) * in_plane : nullptr;
                for (int co = 0; co < cout; ++co) {
                    const real* kp = ker.ptr() + (static_cast<size_t>(co) * cin + ci) * k * k;
                    real* gkp = need_k ? gker + (static_cast<size_t>(co) * cin + ci) * k * k : nullptr;
                    const real* gop = gob + co * out_plane;
                    for (int y = 0; y < oh; ++y) {
                        const real* gorow = gop + static_cast<size_t>(y) * ow;
                        for (int kh = 0; kh < k; ++kh) {
                            const int ih = y * stride + kh - padding;
                            if (ih < 0 || ih >= h) continue;
                            const real* irow = ip + static_cast<size_t>(ih) * w;
                            real* girow = need_in ? gip + static_cast<size_t>(ih) * w : nullptr;
                            for (int kw = 0; kw < k; ++kw) {
                                const real kv = kp[kh * k + kw];
                                if (stride == 1) {
                                    const int iw0 = kw - padding;
                                    const int lo = std::max(0, -iw0);
                                    const int hi = std::min(ow - 1, w - 1 - iw0);
                                    if (need_in) {
                                        real* gr = girow + iw0;
                                        for (int x = lo; x <= hi; ++x) gr[x] += kv * gorow[x];
                                    }
                                    if (need_k) {
                                        const real* ir = irow + iw0;
                                        real acc = 0;
                                        for (int x = lo; x <= hi; ++x) acc += ir[x] * gorow[x];
                                        gkp[kh * k + kw] += acc;
                                    }
                                } else {
                                    for (int x = 0; x < ow; ++x) {
                                        const int iw = x * stride + kw - padding;
                                        if (iw < 0 || iw >= w) continue;
                                        if (need_in) girow[iw] += kv * gorow[x];
                                        if (need_k) gkp[kh * k + kw] += irow[iw] * gorow[x];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    };
    return t.emit(std::move(out), {input, kernel, bias}, std::move(back), "conv2d");
}

Var maxpool2d(Tape& t, Var input, int window, int stride, const char* where) {
    const Tensor& in = t.val(input);
    if (in.rank() != 3 && in.rank() != 4)
        throw ShapeError(std::string(where) + ": pool input must be rank 3 or 4, got " +
                         in.shape_str());
    const bool batched = in.rank() == 4;
    const int b_count = batched ? in.extent(0) : 1;
    const int c = in.extent(batched ? 1 : 0);
    const int h = in.extent(batched ? 2 : 1);
    const int w = in.extent(batched ? 3 : 2);
    if (window > h || window > w)
        throw ConfigError(std::string(where) + ": pool window " + std::to_string(window) +
                          " exceeds input " + std::to_string(h) + "x" + std::to_string(w));
    if (stride < 1) throw ConfigError(std::string(where) + ": stride must be >= 1");
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;

    Tensor out(batched ? std::vector<int>{b_count, c, oh, ow} : std::vector<int>{c, oh, ow});
    std::vector<int> argmax(static_cast<size_t>(out.numel()));
    const size_t in_plane = static_cast<size_t>(h) * w;
    const size_t out_plane = static_cast<size_t>(oh) * ow;
    size_t oi = 0;
    for (int bc = 0; bc < b_count * c; ++bc) {
        const real* ip = in.ptr() + bc * in_plane;
        real* op = out.ptr() + bc * out_plane;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x, ++oi) {
                int best = (y * stride) * w + x * stride;
                real bv = ip[best];
                for (int ky = 0; ky < window; ++ky) {
                    const int iy = y * stride + ky;
                    for (int kx = 0; kx < window; ++kx) {
                        const int idx = iy * w + x * stride + kx;
                        if (ip[idx] > bv) {  // strict: ties keep the first
                            bv = ip[idx];
                            best = idx;
                        }
                    }
                }
                op[static_cast<size_t>(y) * ow + x] = bv;
                argmax[oi] = best;
            }
        }
    }
    return t.emit(std::move(out), {input},
                  [input, b_count, c, in_plane, out_plane, argmax = std::move(argmax)](
                      Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(input)) return;
                      real* gin = tp.grad(input).ptr();
                      size_t oi = 0;
                      for (int bc = 0; bc < b_count * c; ++bc) {
                          real* gp = gin + bc * in_plane;
                          const real* gop = go.ptr() + bc * out_plane;
                          for (size_t i = 0; i < out_plane; ++i, ++oi)
                              gp[argmax[oi]] += gop[i];
                      }
                  },
                  "maxpool2d");
}

Var batchnorm(Tape& t, Var input, Var gamma, Var beta, BatchNormState& state, BnMode mode,
              real eps, real momentum, bool update_running, const char* where) {
    const Tensor& in = t.val(input);
    require_rank(in, 4, where);
    const int b = in.extent(0), c = in.extent(1), h = in.extent(2), w = in.extent(3);
    const Tensor& g = t.val(gamma);
    const Tensor& be = t.val(beta);
    if (g.rank() != 1 || g.extent(0) != c || be.rank() != 1 || be.extent(0) != c)
        throw ShapeError(std::string(where) + ": gamma/beta must be [" + std::to_string(c) +
                         "], got " + g.shape_str() + ", " + be.shape_str());
    const long long m = static_cast<long long>(b) * h * w;
    const size_t plane = static_cast<size_t>(h) * w;

    if (mode == BnMode::eval) {
        if (!state.initialized)
            throw ConfigError(std::string(where) +
                              ": batchnorm eval with uninitialized statistics");
        Tensor out(in.shape);
        Tensor invstd({c});
        for (int ch = 0; ch < c; ++ch)
            invstd.at(ch) = real(1) / std::sqrt(state.running_var.at(ch) + eps);
        Tensor rm = state.running_mean;
        for (int bi = 0; bi < b; ++bi) {
            for (int ch = 0; ch < c; ++ch) {
                const real* ip = in.ptr() + (static_cast<size_t>(bi) * c + ch) * plane;
                real* op = out.ptr() + (static_cast<size_t>(bi) * c + ch) * plane;
                const real mu = rm.at(ch), is = invstd.at(ch), ga = g.at(ch), bt = be.at(ch);
                for (size_t i = 0; i < plane; ++i) op[i] = ga * (ip[i] - mu) * is + bt;
            }
        }
        return t.emit(std::move(out), {input, gamma, beta},
                      [input, gamma, beta, b, c, plane, rm = std::move(rm),
                       invstd = std::move(invstd)](Tape& tp, const Tensor& go) {
                          const Tensor& in = tp.val(input);
                          const Tensor& g = tp.val(gamma);
                          const bool ni = tp.needs_grad(input);
                          const bool ng = tp.needs_grad(gamma);
                          const bool nb = tp.needs_grad(beta);
                          for (int ch = 0; ch < c; ++ch) {
                              const real is = invstd.at(ch), mu = rm.at(ch), ga = g.at(ch);
                              real dg = 0, db = 0;
                              for (int bi = 0; bi < b; ++bi) {
                                  const size_t off = (static_cast<size_t>(bi) * c + ch) * plane;
                                  const real* gp = go.ptr() + off;
                                  const real* ip = in.ptr() + off;
                                  real* gip = ni ? tp.grad(input).ptr() + off : nullptr;
                                  for (size_t i = 0; i < plane; ++i) {
                                      if (ni) gip[i] += gp[i] * ga * is;
                                      dg += gp[i] * (ip[i] - mu) * is;
                                      db += gp[i];
                                  }
                              }
                              if (ng) tp.grad(gamma).at(ch) += dg;
                              if (nb) tp.grad(beta).at(ch) += db;
                          }
                      },
                      "batchnorm");
    }

    // train mode: batch statistics, biased variance
    Tensor mean({c});
    Tensor invstd({c});
    Tensor xhat(in.shape);
    for (int ch = 0; ch < c; ++ch) {
        real sum = 0;
        for (int bi = 0; bi < b; ++bi) {
            const real* ip = in.ptr() + (static_cast<size_t>(bi) * c + ch) * plane;
            for (size_t i = 0; i < plane; ++i) sum += ip[i];
        }
        const real mu = sum / static_cast<real>(m);
        real var = 0;
        for (int bi = 0; bi < b; ++bi) {
            const real* ip = in.ptr() + (static_cast<size_t>(bi) * c + ch) * plane;
            for (size_t i = 0; i < plane; ++i) {
                const real d = ip[i] - mu;
                var += d * d;
            }
        }
        var /= static_cast<real>(m);
        mean.at(ch) = mu;
        invstd.at(ch) = real(1) / std::sqrt(var + eps);
        if (update_running) {
            state.running_mean.at(ch) = (real(1) - momentum) * state.running_mean.at(ch) +
                                        momentum * mu;
            state.running_var.at(ch) = (real(1) - momentum) * state.running_var.at(ch) +
                                       momentum * var;
        }
    }
    if (update_running) state.initialized = true;

    Tensor out(in.shape);
    for (int bi = 0; bi < b; ++bi) {
        for (int ch = 0; ch < c; ++ch) {
            const size_t off = (static_cast<size_t>(bi) * c + ch) * plane;
            const real* ip = in.ptr() + off;
            real* xp = xhat.ptr() + off;
            real* op = out.ptr() + off;
            const real mu = mean.at(ch), is = invstd.at(ch), ga = g.at(ch), bt = be.at(ch);
            for (size_t i = 0; i < plane; ++i) {
                xp[i] = (ip[i] - mu) * is;
                op[i] = ga * xp[i] + bt;
            }
        }
    }
    return t.emit(
        std::move(out), {input, gamma, beta},
        [input, gamma, beta, b, c, plane, m, invstd = std::move(invstd),
         xhat = std::move(xhat)](Tape& tp, const Tensor& go) {
            const Tensor& g = tp.val(gamma);
            const bool ni = tp.needs_grad(input);
            const bool ng = tp.needs_grad(gamma);
            const bool nb = tp.needs_grad(beta);
            for (int ch = 0; ch < c; ++ch) {
                real sum_g = 0, sum_gx = 0;
                for (int bi = 0; bi < b; ++bi) {
                    const size_t off = (static_cast<size_t>(bi) * c + ch) * plane;
                    const real* gp = go.ptr() + off;
                    const real* xp = xhat.ptr() + off;
                    for (size_t i = 0; i < plane; ++i) {
                        sum_g += gp[i];
                        sum_gx += gp[i] * xp[i];
                    }
                }
                if (ng) tp.grad(gamma).at(ch) += sum_gx;
                if (nb) tp.grad(beta).at(ch) += sum_g;
                if (ni) {
                    const real scale = g.at(ch) * invstd.at(ch) / static_cast<real>(m);
                    for (int bi = 0; bi < b; ++bi) {
                        const size_t off = (static_cast<size_t>(bi) * c + ch) * plane;
                        const real* gp = go.ptr() + off;
                        const real* xp = xhat.ptr() + off;
                        real* gip = tp.grad(input).ptr() + off;
                        for (size_t i = 0; i < plane; ++i)
                            gip[i] += scale * (static_cast<real>(m) * gp[i] - sum_g -
                                               xp[i] * sum_gx);
                    }
                }
            }
        },
        "batchnorm");
}

Var relu(Tape& t, Var x) {
    const Tensor& in = t.val(x);
    Tensor out(in.shape);
    for (size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > 0 ? in.data[i] : 0;
    return t.emit(std::move(out), {x},
                  [x](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      const Tensor& in = tp.val(x);
                      Tensor& gx = tp.grad(x);
                      for (size_t i = 0; i < go.data.size(); ++i)
                          if (in.data[i] > 0) gx.data[i] += go.data[i];
                  },
                  "relu");
}

Var sigmoid(Tape& t, Var x) {
    const Tensor& in = t.val(x);
    Tensor out(in.shape);
    for (size_t i = 0; i < in.data.size(); ++i) {
        const real v = in.data[i];
        out.data[i] = v >= 0 ? real(1) / (real(1) + std::exp(-v))
                             : std::exp(v) / (real(1) + std::exp(v));
    }
    Tensor saved = out;
    return t.emit(std::move(out), {x},
                  [x, saved = std::move(saved)](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      Tensor& gx = tp.grad(x);
                      for (size_t i = 0; i < go.data.size(); ++i) {
                          const real s = saved.data[i];
                          gx.data[i] += go.data[i] * s * (real(1) - s);
                      }
                  },
                  "sigmoid");
}

Var fully_connected(Tape& t, Var x, Var w, Var b) {
    const Tensor& xv = t.val(x);
    const Tensor& wv = t.val(w);
    const Tensor& bv = t.val(b);
    require_rank(wv, 2, "fully_connected");
    require_rank(bv, 1, "fully_connected");
    if (xv.rank() != 1 && xv.rank() != 2)
        throw ShapeError("fully_connected: input must be rank 1 or 2, got " + xv.shape_str());
    const bool batched = xv.rank() == 2;
    const int rows = batched ? xv.extent(0) : 1;
    const int in_f = xv.extent(batched ? 1 : 0);
    const int out_f = wv.extent(0);
    if (wv.extent(1) != in_f)
        throw ShapeError("fully_connected: weight " + wv.shape_str() + " does not accept input " +
                         xv.shape_str());
    if (bv.extent(0) != out_f)
        throw ShapeError("fully_connected: bias extent " + std::to_string(bv.extent(0)) +
                         " != out features " + std::to_string(out_f));
    Tensor out(batched ? std::vector<int>{rows, out_f} : std::vector<int>{out_f});
    for (int r = 0; r < rows; ++r)
        for (int o = 0; o < out_f; ++o) out.data[static_cast<size_t>(r) * out_f + o] = bv.at(o);
    gemm_nt(xv.ptr(), wv.ptr(), out.ptr(), rows, in_f, out_f, true);
    return t.emit(std::move(out), {x, w, b},
                  [x, w, b, rows, in_f, out_f](Tape& tp, const Tensor& go) {
                      if (tp.needs_grad(x))
                          gemm_nn(go.ptr(), tp.val(w).ptr(), tp.grad(x).ptr(), rows, out_f, in_f,
                                  true);
                      if (tp.needs_grad(w))
                          gemm_tn(go.ptr(), tp.val(x).ptr(), tp.grad(w).ptr(), rows, out_f, in_f,
                                  true);
                      if (tp.needs_grad(b)) {
                          Tensor& gb = tp.grad(b);
                          for (int r = 0; r < rows; ++r)
                              for (int o = 0; o < out_f; ++o)
                                  gb.at(o) += go.data[static_cast<size_t>(r) * out_f + o];
                      }
                  },
                  "fully_connected");
}

Var concat_channels(Tape& t, Var a, Var b) {
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    require_rank(av, 3, "concat_channels");
    require_rank(bv, 3, "concat_channels");
    if (av.extent(1) != bv.extent(1) || av.extent(2) != bv.extent(2))
        throw ShapeError("concat_channels: spatial extent mismatch " + av.shape_str() + " vs " +
                         bv.shape_str());
    const int c1 = av.extent(0), c2 = bv.extent(0);
    Tensor out({c1 + c2, av.extent(1), av.extent(2)});
    std::memcpy(out.ptr(), av.ptr(), av.data.size() * sizeof(real));
    std::memcpy(out.ptr() + av.data.size(), bv.ptr(), bv.data.size() * sizeof(real));
    const size_t n1 = av.data.size();
    return t.emit(std::move(out), {a, b},
                  [a, b, n1](Tape& tp, const Tensor& go) {
                      if (tp.needs_grad(a)) {
                          Tensor& ga = tp.grad(a);
                          for (size_t i = 0; i < n1; ++i) ga.data[i] += go.data[i];
                      }
                      if (tp.needs_grad(b)) {
                          Tensor& gb = tp.grad(b);
                          for (size_t i = 0; i < gb.data.size(); ++i)
                              gb.data[i] += go.data[n1 + i];
                      }
                  },
                  "concat_channels");
}

Var elementwise_mean(Tape& t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("elementwise_mean: no inputs");
    const Tensor& first = t.val(xs[0]);
    for (const Var& v : xs)
        if (!t.val(v).same_shape(first))
            throw ShapeError("elementwise_mean: extent mismatch " + t.val(v).shape_str() +
                             " vs " + first.shape_str());
    const real inv = real(1) / static_cast<real>(xs.size());
    Tensor out(first.shape);
    for (const Var& v : xs) {
        const Tensor& x = t.val(v);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
    }
    for (auto& v : out.data) v *= inv;
    return t.emit(std::move(out), xs,
                  [xs, inv](Tape& tp, const Tensor& go) {
                      for (const Var& v : xs) {
                          if (!tp.needs_grad(v)) continue;
                          Tensor& g = tp.grad(v);
                          for (size_t i = 0; i < go.data.size(); ++i)
                              g.data[i] += go.data[i] * inv;
                      }
                  },
                  "elementwise_mean");
}

Var stack_batch(Tape& t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("stack_batch: no inputs");
    const Tensor& first = t.val(xs[0]);
    require_rank(first, 3, "stack_batch");
    for (const Var& v : xs)
        if (!t.val(v).same_shape(first))
            throw ShapeError("stack_batch: shape mismatch " + t.val(v).shape_str() + " vs " +
                             first.shape_str());
    const size_t n = first.data.size();
    Tensor out({static_cast<int>(xs.size()), first.extent(0), first.extent(1), first.extent(2)});
    for (size_t i = 0; i < xs.size(); ++i)
        std::memcpy(out.ptr() + i * n, t.val(xs[i]).ptr(), n * sizeof(real));
    return t.emit(std::move(out), xs,
                  [xs, n](Tape& tp, const Tensor& go) {
                      for (size_t i = 0; i < xs.size(); ++i) {
                          if (!tp.needs_grad(xs[i])) continue;
                          Tensor& g = tp.grad(xs[i]);
                          const real* gp = go.ptr() + i * n;
                          for (size_t j = 0; j < n; ++j) g.data[j] += gp[j];
                      }
                  },
                  "stack_batch");
}

Var slice_batch(Tape& t, Var x, int index) {
    const Tensor& xv = t.val(x);
    require_rank(xv, 4, "slice_batch");
    if (index < 0 || index >= xv.extent(0))
        throw ShapeError("slice_batch: index " + std::to_string(index) + " out of range for " +
                         xv.shape_str());
    const size_t n = static_cast<size_t>(xv.extent(1)) * xv.extent(2) * xv.extent(3);
    Tensor out({xv.extent(1), xv.extent(2), xv.extent(3)});
    std::memcpy(out.ptr(), xv.ptr() + static_cast<size_t>(index) * n, n * sizeof(real));
    return t.emit(std::move(out), {x},
                  [x, index, n](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      real* g = tp.grad(x).ptr() + static_cast<size_t>(index) * n;
                      for (size_t i = 0; i < n; ++i) g[i] += go.data[i];
                  },
                  "slice_batch");
}

Var spatial_flatten(Tape& t, Var x) {
    const Tensor& xv = t.val(x);
    require_rank(xv, 3, "spatial_flatten");
    const int c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
    const int hw = h * w;
    Tensor out({hw, c});
    for (int ch = 0; ch < c; ++ch) {
        const real* ip = xv.ptr() + static_cast<size_t>(ch) * hw;
        for (int p = 0; p < hw; ++p) out.data[static_cast<size_t>(p) * c + ch] = ip[p];
    }
    return t.emit(std::move(out), {x},
                  [x, c, hw](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      Tensor& g = tp.grad(x);
                      for (int ch = 0; ch < c; ++ch) {
                          real* gp = g.ptr() + static_cast<size_t>(ch) * hw;
                          for (int p = 0; p < hw; ++p)
                              gp[p] += go.data[static_cast<size_t>(p) * c + ch];
                      }
                  },
                  "spatial_flatten");
}

Var spatial_unflatten(Tape& t, Var x, int h, int w) {
    const Tensor& xv = t.val(x);
    require_rank(xv, 2, "spatial_unflatten");
    if (xv.extent(0) != h * w)
        throw ShapeError("spatial_unflatten: rows " + std::to_string(xv.extent(0)) +
                         " != " + std::to_string(h) + "*" + std::to_string(w));
    const int c = xv.extent(1);
    const int hw = h * w;
    Tensor out({c, h, w});
    for (int ch = 0; ch < c; ++ch) {
        real* op = out.ptr() + static_cast<size_t>(ch) * hw;
        for (int p = 0; p < hw; ++p) op[p] = xv.data[static_cast<size_t>(p) * c + ch];
    }
    return t.emit(std::move(out), {x},
                  [x, c, hw](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      Tensor& g = tp.grad(x);
                      for (int ch = 0; ch < c; ++ch) {
                          const real* gp = go.ptr() + static_cast<size_t>(ch) * hw;
                          for (int p = 0; p < hw; ++p)
                              g.data[static_cast<size_t>(p) * c + ch] += gp[p];
                      }
                  },
                  "spatial_unflatten");
}

Var flatten(Tape& t, Var x) {
    const Tensor& xv = t.val(x);
    Tensor out = Tensor::from({static_cast<int>(xv.numel())}, xv.data);
    return t.emit(std::move(out), {x},
                  [x](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      Tensor& g = tp.grad(x);
                      for (size_t i = 0; i < go.data.size(); ++i) g.data[i] += go.data[i];
                  },
                  "flatten");
}

Var blend(Tape& t, Var a, Var b, real lambda) {
    if (lambda == real(0)) return a;  // exact passthrough
    const Tensor& av = t.val(a);
    const Tensor& bv = t.val(b);
    if (!av.same_shape(bv))
        throw ShapeError("blend: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor out(av.shape);
    const real la = real(1) - lambda;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = lambda * bv.data[i] + la * av.data[i];
    return t.emit(std::move(out), {a, b},
                  [a, b, lambda, la](Tape& tp, const Tensor& go) {
                      if (tp.needs_grad(a)) {
                          Tensor& g = tp.grad(a);
                          for (size_t i = 0; i < go.data.size(); ++i) g.data[i] += la * go.data[i];
                      }
                      if (tp.needs_grad(b)) {
                          Tensor& g = tp.grad(b);
                          for (size_t i = 0; i < go.data.size(); ++i)
                              g.data[i] += lambda * go.data[i];
                      }
                  },
                  "blend");
}

Var concat_scalars(Tape& t, const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_scalars: no inputs");
    Tensor out({static_cast<int>(xs.size())});
    for (size_t i = 0; i < xs.size(); ++i) {
        const Tensor& x = t.val(xs[i]);
        if (x.numel() != 1)
            throw ShapeError("concat_scalars: input " + std::to_string(i) + " is not scalar: " +
                             x.shape_str());
        out.data[i] = x.data[0];
    }
    return t.emit(std::move(out), xs,
                  [xs](Tape& tp, const Tensor& go) {
                      for (size_t i = 0; i < xs.size(); ++i) {
                          if (!tp.needs_grad(xs[i])) continue;
                          tp.grad(xs[i]).data[0] += go.data[i];
                      }
                  },
                  "concat_scalars");
}

Var mse(Tape& t, Var pred, const Tensor& target) {
    const Tensor& p = t.val(pred);
    if (!p.same_shape(target))
        throw ShapeError("mse: prediction " + p.shape_str() + " vs target " +
                         cfmn::shape_str(target.shape));
    const real inv = real(1) / static_cast<real>(p.numel());
    real acc = 0;
    for (size_t i = 0; i < p.data.size(); ++i) {
        const real d = p.data[i] - target.data[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc * inv);
    return t.emit(std::move(out), {pred},
                  [pred, target, inv](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(pred)) return;
                      const Tensor& p = tp.val(pred);
                      Tensor& g = tp.grad(pred);
                      const real scale = go.data[0] * 2 * inv;
                      for (size_t i = 0; i < p.data.size(); ++i)
                          g.data[i] += scale * (p.data[i] - target.data[i]);
                  },
                  "mse");
}

Var weighted_sum(Tape& t, Var x, Tensor w) {
    const Tensor& xv = t.val(x);
    if (!xv.same_shape(w))
        throw ShapeError("weighted_sum: shape mismatch " + xv.shape_str() + " vs " +
                         cfmn::shape_str(w.shape));
    real acc = 0;
    for (size_t i = 0; i < xv.data.size(); ++i) acc += xv.data[i] * w.data[i];
    Tensor out = Tensor::scalar(acc);
    return t.emit(std::move(out), {x},
                  [x, w = std::move(w)](Tape& tp, const Tensor& go) {
                      if (!tp.needs_grad(x)) return;
                      Tensor& g = tp.grad(x);
                      for (size_t i = 0; i < g.data.size(); ++i)
                          g.data[i] += go.data[0] * w.data[i];
                  },
                  "weighted_sum");
}

}  // namespace ops
}  // namespace cfmn
