// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "dualpeft/autodiff.hpp"

namespace dualpeft::ad {

namespace {

void require_2d(const char* op, const Tensor& t) {
    if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

double log_sum_exp(const double* row, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, row[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(row[i] - m);
    return m + std::log(s);
}

}  // namespace

double silu_value(double x) { return x / (1.0 + std::exp(-x)); }

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_2d("matmul", av);
    require_2d("matmul", bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k) {
        throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* o = &out[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = &bv[p * n];
            for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
        }
    }
    return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        const Tensor& av = t.value(a.id());
        const Tensor& bv = t.value(b.id());
        if (auto ga = t.grad_target(a); !ga.empty()) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
                    ga[i * k + p] += s;
                }
        }
        if (auto gb = t.grad_target(b); !gb.empty()) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                }
        }
    });
}

Var matmul_nt(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_2d("matmul_nt", av);
    require_2d("matmul_nt", bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k) {
        throw ShapeError("matmul_nt: shape mismatch " + shape_str(av.shape()) + " x " + shape_str(bv.shape()) + "^T");
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &av[i * k];
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = &bv[j * k];
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            out[i * n + j] = s;
        }
    }
    return a.tape()->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        const Tensor& av = t.value(a.id());
        const Tensor& bv = t.value(b.id());
        if (auto ga = t.grad_target(a); !ga.empty()) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * bv[j * k + p];
                }
        }
        if (auto gb = t.grad_target(b); !gb.empty()) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = g[i * n + j];
                    if (gij == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * av[i * k + p];
                }
        }
    });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    require_2d("transpose", av);
    const std::size_t m = av.rows(), n = av.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return a.tape()->record(std::move(out), {a}, [a, m, n](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto ga = t.grad_target(a);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
}

Var add(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same("add", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        for (Var in : {a, b}) {
            auto gi = t.grad_target(in);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
        }
    });
}

Var sub(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same("sub", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto ga = t.grad_target(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        auto gb = t.grad_target(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    });
}

Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_same("mul", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        const Tensor& av = t.value(a.id());
        const Tensor& bv = t.value(b.id());
        auto ga = t.grad_target(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
        auto gb = t.grad_target(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    });
}

Var scale(Var a, double c) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    return a.tape()->record(std::move(out), {a}, [a, c](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto ga = t.grad_target(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * c;
    });
}

Var silu(Var a) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = silu_value(av[i]);
    return a.tape()->record(std::move(out), {a}, [a](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        const Tensor& av = t.value(a.id());
        auto ga = t.grad_target(a);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-av[i]));
            ga[i] += g[i] * s * (1.0 + av[i] * (1.0 - s));
        }
    });
}

Var softmax(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 1 && av.rank() != 2) throw ShapeError("softmax: expected 1-D or 2-D, got " + shape_str(av.shape()));
    const std::size_t rows = av.rows(), cols = av.cols();
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double lse = log_sum_exp(&av[r * cols], cols);
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(av[r * cols + c] - lse);
    }
    return a.tape()->record(std::move(out), {a}, [a, rows, cols](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        const Tensor& y = t.value(self);
        auto ga = t.grad_target(a);
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
            for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
    });
}

Var rms_norm(Var x, Var gain, double eps) {
    const Tensor& xv = x.value();
    const Tensor& gv = gain.value();
    require_2d("rms_norm", xv);
    if (gv.rank() != 1 || gv.size() != xv.cols()) {
        throw ShapeError("rms_norm: gain shape " + shape_str(gv.shape()) + " does not match input " + shape_str(xv.shape()));
    }
    const std::size_t rows = xv.rows(), d = xv.cols();
    Tensor out(xv.shape());
    std::vector<double> inv_rms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        double ms = 0.0;
        for (std::size_t c = 0; c < d; ++c) ms += xv[r * d + c] * xv[r * d + c];
        inv_rms[r] = 1.0 / std::sqrt(ms / static_cast<double>(d) + eps);
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xv[r * d + c] * inv_rms[r] * gv[c];
    }
    return x.tape()->record(std::move(out), {x, gain},
                            [x, gain, rows, d, inv_rms = std::move(inv_rms)](Tape& t, std::uint32_t self) {
                                auto g = t.grad(self);
                                const Tensor& xv = t.value(x.id());
                                const Tensor& gv = t.value(gain.id());
                                auto gg = t.grad_target(gain);
                                auto gx = t.grad_target(x);
                                for (std::size_t r = 0; r < rows; ++r) {
                                    const double ir = inv_rms[r];
                                    double dot = 0.0;
                                    for (std::size_t c = 0; c < d; ++c) {
                                        const double n = xv[r * d + c] * ir;
                                        if (!gg.empty()) gg[c] += g[r * d + c] * n;
                                        dot += g[r * d + c] * gv[c] * n;
                                    }
                                    if (gx.empty()) continue;
                                    const double mean_dot = dot / static_cast<double>(d);
                                    for (std::size_t c = 0; c < d; ++c) {
                                        const double n = xv[r * d + c] * ir;
                                        gx[r * d + c] += (g[r * d + c] * gv[c] - n * mean_dot) * ir;
                                    }
                                }
                            });
}

Var embedding(Var table, std::span<const int> ids) {
    const Tensor& tv = table.value();
    require_2d("embedding", tv);
    if (ids.empty()) throw ShapeError("embedding: empty id list");
    const std::size_t vocab = tv.rows(), d = tv.cols();
    std::vector<int> idx(ids.begin(), ids.end());
    Tensor out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || static_cast<std::size_t>(idx[r]) >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(idx[r]) + " outside table of " +
                                    std::to_string(vocab) + " rows");
        }
        std::copy_n(&tv[static_cast<std::size_t>(idx[r]) * d], d, &out[r * d]);
    }
    return table.tape()->record(std::move(out), {table}, [table, d, idx = std::move(idx)](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto gt = t.grad_target(table);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) gt[static_cast<std::size_t>(idx[r]) * d + c] += g[r * d + c];
    });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    require_2d("slice_cols", av);
    const std::size_t rows = av.rows(), cols = av.cols();
    if (begin >= end || end > cols) {
        throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(av.shape()));
    }
    const std::size_t w = end - begin;
    Tensor out({rows, w});
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(&av[r * cols + begin], w, &out[r * w]);
    return a.tape()->record(std::move(out), {a}, [a, rows, cols, begin, w](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto ga = t.grad_target(a);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
    });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    require_2d("slice_rows", av);
    const std::size_t rows = av.rows(), cols = av.cols();
    if (begin >= end || end > rows) {
        throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(av.shape()));
    }
    Tensor out({end - begin, cols});
    std::copy_n(&av[begin * cols], (end - begin) * cols, &out[0]);
    return a.tape()->record(std::move(out), {a}, [a, cols, begin](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto ga = t.grad_target(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        const Tensor& pv = p.value();
        require_2d("concat_cols", pv);
        if (pv.rows() != rows) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(pv.shape()));
        }
        widths.push_back(pv.cols());
        total += pv.cols();
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(&pv[r * widths[k]], widths[k], &out[r * total + off]);
        off += widths[k];
    }
    return parts[0].tape()->record(std::move(out), parts, [parts, widths, rows, total](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            auto gp = t.grad_target(parts[k]);
            if (!gp.empty()) {
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[k]; ++c) gp[r * widths[k] + c] += g[r * total + off + c];
            }
            off += widths[k];
        }
    });
}

Var causal_mask(Var scores) {
    const Tensor& sv = scores.value();
    require_2d("causal_mask", sv);
    const std::size_t n = sv.rows();
    if (sv.cols() != n) throw ShapeError("causal_mask: expected a square tensor, got " + shape_str(sv.shape()));
    Tensor out(sv.shape());
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = j > i ? neg_inf : sv[i * n + j];
    return scores.tape()->record(std::move(out), {scores}, [scores, n](Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        auto gs = t.grad_target(scores);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) gs[i * n + j] += g[i * n + j];
    });
}

Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    return a.tape()->record(Tensor::scalar(s), {a}, [a](Tape& t, std::uint32_t self) {
        const double g = t.grad(self)[0];
        auto ga = t.grad_target(a);
        for (double& v : ga) v += g;
    });
}

Var token_logprobs(Var logits, std::span<const int> tokens) {
    const Tensor& lv = logits.value();
    require_2d("token_logprobs", lv);
    const std::size_t rows = lv.rows(), vocab = lv.cols();
    if (tokens.size() != rows) {
        throw ShapeError("token_logprobs: " + std::to_string(tokens.size()) + " tokens for logits " +
                         shape_str(lv.shape()));
    }
    std::vector<int> tok(tokens.begin(), tokens.end());
    Tensor out({rows});
    std::vector<double> lse(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        if (tok[r] < 0 || static_cast<std::size_t>(tok[r]) >= vocab) {
            throw std::out_of_range("token_logprobs: token " + std::to_string(tok[r]) + " outside vocabulary of " +
                                    std::to_string(vocab));
        }
        lse[r] = log_sum_exp(&lv[r * vocab], vocab);
        out[r] = lv[r * vocab + static_cast<std::size_t>(tok[r])] - lse[r];
    }
    return logits.tape()->record(
        std::move(out), {logits},
        [logits, rows, vocab, tok = std::move(tok), lse = std::move(lse)](Tape& t, std::uint32_t self) {
            auto g = t.grad(self);
            const Tensor& lv = t.value(logits.id());
            auto gl = t.grad_target(logits);
            for (std::size_t r = 0; r < rows; ++r) {
                if (g[r] == 0.0) continue;
                for (std::size_t v = 0; v < vocab; ++v) gl[r * vocab + v] -= g[r] * std::exp(lv[r * vocab + v] - lse[r]);
                gl[r * vocab + static_cast<std::size_t>(tok[r])] += g[r];
            }
        });
}

Var masked_cross_entropy(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    const Tensor& lv = logits.value();
    require_2d("masked_cross_entropy", lv);
    const std::size_t rows = lv.rows(), vocab = lv.cols();
    if (targets.size() != rows || mask.size() != rows) {
        throw ShapeError("masked_cross_entropy: logits " + shape_str(lv.shape()) + " with " +
                         std::to_string(targets.size()) + " targets and " + std::to_string(mask.size()) + " mask entries");
    }
    std::vector<std::size_t> active;
    for (std::size_t r = 0; r < rows; ++r) {
        if (mask[r]) active.push_back(r);
    }
    if (active.empty()) throw std::invalid_argument("masked_cross_entropy: mask selects no output positions");
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<double> lse(rows, 0.0);
    double total = 0.0;
    for (std::size_t r : active) {
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
            throw std::out_of_range("masked_cross_entropy: target " + std::to_string(tgt[r]) +
                                    " outside vocabulary of " + std::to_string(vocab));
        }
        lse[r] = log_sum_exp(&lv[r * vocab], vocab);
        total += lse[r] - lv[r * vocab + static_cast<std::size_t>(tgt[r])];
    }
    const double inv = 1.0 / static_cast<double>(active.size());
    return logits.tape()->record(
        Tensor::scalar(total * inv), {logits},
        [logits, vocab, inv, active = std::move(active), tgt = std::move(tgt), lse = std::move(lse)](Tape& t,
                                                                                                   std::uint32_t self) {
            const double g = t.grad(self)[0] * inv;
            const Tensor& lv = t.value(logits.id());
            auto gl = t.grad_target(logits);
            for (std::size_t r : active) {
                for (std::size_t v = 0; v < vocab; ++v) gl[r * vocab + v] += g * std::exp(lv[r * vocab + v] - lse[r]);
                gl[r * vocab + static_cast<std::size_t>(tgt[r])] -= g;
            }
        });
}

}  // namespace dualpeft::ad
