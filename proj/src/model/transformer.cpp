// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dualpeft/model.hpp"

namespace dualpeft::model {

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto ff = static_cast<std::size_t>(cfg.d_ff);
    const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
        const std::size_t at = off;
        off += n;
        return at;
    };
    tok_emb_ = take(vocab * d);
    pos_emb_ = take(static_cast<std::size_t>(cfg.max_seq_len) * d);
    for (int l = 0; l < cfg.n_layers; ++l) {
        Layer layer{};
        layer.attn_norm = take(d);
        layer.wq = take(d * d);
        layer.wk = take(d * d);
        layer.wv = take(d * d);
        layer.wo = take(d * d);
        layer.mlp_norm = take(d);
        layer.w_gate = take(ff * d);
        layer.w_up = take(ff * d);
        layer.w_down = take(d * ff);
        layers_.push_back(layer);
    }
    final_norm_ = take(d);
    head_ = take(vocab * d);
    params_.assign(off, 0.0);
}

std::size_t Model::site_weight(int layer, Site s) const {
    const Layer& l = layers_.at(static_cast<std::size_t>(layer));
    switch (s) {
        case Site::Q: return l.wq;
        case Site::K: return l.wk;
        case Site::V: return l.wv;
        case Site::Gate: return l.w_gate;
        case Site::Up: return l.w_up;
        case Site::Down: return l.w_down;
    }
    return 0;
}

AdapterSet::AdapterSet(const ModelConfig& model, const LoraConfig& lora)
    : cfg_(lora), layout_(model, lora), values_(layout_.size(), 0.0) {}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
    Model m(cfg);
    Rng rng(seed);
    auto p = m.params();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto ff = static_cast<std::size_t>(cfg.d_ff);
    auto fill_normal = [&](std::size_t off, std::size_t n, double sd) {
        for (std::size_t i = 0; i < n; ++i) p[off + i] = rng.normal(0.0, sd);
    };
    auto fill_ones = [&](std::size_t off, std::size_t n) { std::fill_n(p.begin() + static_cast<std::ptrdiff_t>(off), n, 1.0); };
    const double residual = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    fill_normal(m.tok_emb(), static_cast<std::size_t>(cfg.vocab_size) * d, 0.1);
    fill_normal(m.pos_emb(), static_cast<std::size_t>(cfg.max_seq_len) * d, 0.1);
    for (const auto& layer : m.layers()) {
        fill_ones(layer.attn_norm, d);
        fill_normal(layer.wq, d * d, 1.0 / std::sqrt(double(d)));
        fill_normal(layer.wk, d * d, 1.0 / std::sqrt(double(d)));
        fill_normal(layer.wv, d * d, 1.0 / std::sqrt(double(d)));
        fill_normal(layer.wo, d * d, residual / std::sqrt(double(d)));
        fill_ones(layer.mlp_norm, d);
        fill_normal(layer.w_gate, ff * d, 1.0 / std::sqrt(double(d)));
        fill_normal(layer.w_up, ff * d, 1.0 / std::sqrt(double(d)));
        fill_normal(layer.w_down, d * ff, residual / std::sqrt(double(ff)));
    }
    fill_ones(m.final_norm(), d);
    fill_normal(m.head(), static_cast<std::size_t>(cfg.vocab_size) * d, 1.0 / std::sqrt(double(d)));
    return m;
}

namespace {

class Binder {
public:
    Binder(ad::Tape& tape, const Model& model, const AdapterSet* adapters, GradSinks sinks)
        : tape_(tape), model_(model), adapters_(adapters), sinks_(sinks) {
        if (!sinks.base.empty() && sinks.base.size() != model.param_count()) {
            throw std::invalid_argument("base gradient sink has wrong size");
        }
        if (!sinks.adapter.empty() && (!adapters || sinks.adapter.size() != adapters->size())) {
            throw std::invalid_argument("adapter gradient sink has wrong size");
        }
    }

    ad::Var base(std::size_t off, ad::Shape shape) {
        const std::size_t n = ad::shape_numel(shape);
        std::span<double> sink;
        if (!sinks_.base.empty()) sink = sinks_.base.subspan(off, n);
        return tape_.parameter(model_.params().subspan(off, n), std::move(shape), sink);
    }

    ad::Var adapter(const AdapterLayout::Block& b) {
        std::span<double> sink;
        if (!sinks_.adapter.empty()) sink = sinks_.adapter.subspan(b.offset, b.size());
        return tape_.parameter(adapters_->block_values(b), {b.rows, b.cols}, sink);
    }

    // x [T x in] -> [T x out] through the (possibly adapted) site weight.
    ad::Var site_linear(ad::Var x, int layer, Site s) {
        const auto [in, out] = site_in_out(model_.config(), s);
        ad::Var w = base(model_.site_weight(layer, s), {std::size_t(out), std::size_t(in)});
        ad::Var y = ad::matmul_nt(x, w);
        if (!adapters_) return y;
        const auto* a = adapters_->layout().find(layer, s, Matrix::A);
        if (!a) return y;
        const auto* b = adapters_->layout().find(layer, s, Matrix::B);
        ad::Var low = ad::matmul_nt(ad::matmul_nt(x, adapter(*a)), adapter(*b));
        return ad::add(y, ad::scale(low, adapters_->config().scale));
    }

    const Model& model() const { return model_; }

private:
    ad::Tape& tape_;
    const Model& model_;
    const AdapterSet* adapters_;
    GradSinks sinks_;
};

}  // namespace

ad::Var forward(ad::Tape& tape, const Model& model, const AdapterSet* adapters, std::span<const int> tokens,
                GradSinks sinks) {
    const ModelConfig& cfg = model.config();
    if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
        throw std::invalid_argument("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                                    std::to_string(cfg.max_seq_len));
    }
    for (int t : tokens) {
        if (t < 0 || t >= cfg.vocab_size) {
            throw std::out_of_range("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                                    std::to_string(cfg.vocab_size));
        }
    }
    if (adapters && adapters->layout().size() != adapter_param_count(cfg, adapters->config())) {
        throw std::invalid_argument("forward: adapter set does not match the model configuration");
    }

    Binder bind(tape, model, adapters, sinks);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto vocab = static_cast<std::size_t>(cfg.vocab_size);
    const auto heads = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t hd = d / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<int> positions(tokens.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

    ad::Var x = ad::add(ad::embedding(bind.base(model.tok_emb(), {vocab, d}), tokens),
                        ad::embedding(bind.base(model.pos_emb(), {std::size_t(cfg.max_seq_len), d}), positions));

    for (int l = 0; l < cfg.n_layers; ++l) {
        const Model::Layer& layer = model.layers()[static_cast<std::size_t>(l)];
        ad::Var h = ad::rms_norm(x, bind.base(layer.attn_norm, {d}));
        ad::Var q = bind.site_linear(h, l, Site::Q);
        ad::Var k = bind.site_linear(h, l, Site::K);
        ad::Var v = bind.site_linear(h, l, Site::V);
        std::vector<ad::Var> head_out;
        head_out.reserve(heads);
        for (std::size_t hh = 0; hh < heads; ++hh) {
            ad::Var qh = ad::slice_cols(q, hh * hd, (hh + 1) * hd);
            ad::Var kh = ad::slice_cols(k, hh * hd, (hh + 1) * hd);
            ad::Var vh = ad::slice_cols(v, hh * hd, (hh + 1) * hd);
            ad::Var att = ad::softmax(ad::causal_mask(ad::scale(ad::matmul_nt(qh, kh), att_scale)));
            head_out.push_back(ad::matmul(att, vh));
        }
        ad::Var merged = heads == 1 ? head_out[0] : ad::concat_cols(head_out);
        x = ad::add(x, ad::matmul_nt(merged, bind.base(layer.wo, {d, d})));

        ad::Var h2 = ad::rms_norm(x, bind.base(layer.mlp_norm, {d}));
        ad::Var gate = bind.site_linear(h2, l, Site::Gate);
        ad::Var up = bind.site_linear(h2, l, Site::Up);
        ad::Var down = bind.site_linear(ad::mul(ad::silu(gate), up), l, Site::Down);
        x = ad::add(x, down);
    }
    x = ad::rms_norm(x, bind.base(model.final_norm(), {d}));
    return ad::matmul_nt(x, bind.base(model.head(), {vocab, d}));
}

ad::Tensor logits(const Model& model, const AdapterSet* adapters, std::span<const int> tokens) {
    ad::Tape tape(false);
    return forward(tape, model, adapters, tokens).value();
}

std::vector<int> sample(const Model& model, const AdapterSet* adapters, std::span<const int> prompt, int max_new,
                        double temperature, Rng& rng, int eos) {
    if (!(temperature >= 0.0)) throw std::invalid_argument("sample: temperature must be >= 0");
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    const auto vocab = static_cast<std::size_t>(model.config().vocab_size);
    const auto limit = static_cast<std::size_t>(model.config().max_seq_len);
    std::vector<double> probs(vocab);
    for (int step = 0; step < max_new && seq.size() < limit; ++step) {
        const ad::Tensor lg = logits(model, adapters, seq);
        const double* row = &lg[(lg.rows() - 1) * vocab];
        int next = 0;
        if (temperature == 0.0) {
            for (std::size_t v = 1; v < vocab; ++v) {
                if (row[v] > row[static_cast<std::size_t>(next)]) next = static_cast<int>(v);
            }
        } else {
            double mx = row[0];
            for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
            double total = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) {
                probs[v] = std::exp((row[v] - mx) / temperature);
                total += probs[v];
            }
            double u = rng.uniform() * total;
            next = static_cast<int>(vocab - 1);
            for (std::size_t v = 0; v < vocab; ++v) {
                u -= probs[v];
                if (u < 0.0) {
                    next = static_cast<int>(v);
                    break;
                }
            }
        }
        seq.push_back(next);
        out.push_back(next);
        if (next == eos) break;
    }
    return out;
}

std::vector<int> sample(const Model& model, const AdapterSet* adapters, std::span<const int> prompt, int max_new,
                        double temperature, std::uint64_t seed, int eos) {
    Rng rng(seed);
    return sample(model, adapters, prompt, max_new, temperature, rng, eos);
}

}  // namespace dualpeft::model
