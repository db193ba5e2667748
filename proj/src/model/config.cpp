// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>

#include "dualpeft/model.hpp"

namespace dualpeft::model {

void ModelConfig::validate() const {
    auto positive = [](const char* name, int v) {
        if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1, got " + std::to_string(v));
    };
    positive("n_layers", n_layers);
    positive("d_model", d_model);
    positive("n_heads", n_heads);
    positive("d_ff", d_ff);
    positive("vocab_size", vocab_size);
    positive("max_seq_len", max_seq_len);
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                    std::to_string(n_heads));
    }
}

std::string_view site_name(Site s) {
    switch (s) {
        case Site::Q: return "Q";
        case Site::K: return "K";
        case Site::V: return "V";
        case Site::Gate: return "Gate";
        case Site::Up: return "Up";
        case Site::Down: return "Down";
    }
    return "?";
}

SiteSet SiteSet::parse(std::string_view text) {
    if (text == "QKV") return qkv();
    if (text == "GUD") return gud();
    if (text == "QKVGUD") return all();
    SiteSet out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t comma = text.find(',', pos);
        const std::string_view tok = text.substr(pos, comma == std::string_view::npos ? text.npos : comma - pos);
        bool found = false;
        for (Site s : kAllSites) {
            if (tok == site_name(s)) {
                out.add(s);
                found = true;
            }
        }
        if (!found) throw std::invalid_argument("unknown adapter site '" + std::string(tok) + "'");
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    if (out.empty()) throw std::invalid_argument("adapter site list is empty");
    return out;
}

std::string SiteSet::name() const {
    if (*this == qkv()) return "QKV";
    if (*this == gud()) return "GUD";
    if (*this == all()) return "QKVGUD";
    std::string s;
    for (Site site : kAllSites) {
        if (!has(site)) continue;
        if (!s.empty()) s += ',';
        s += site_name(site);
    }
    return s;
}

std::string_view init_mode_name(InitMode m) {
    switch (m) {
        case InitMode::Standard: return "standard";
        case InitMode::SymmetricSmall: return "symmetric-small";
        case InitMode::PrincipalSingular: return "principal-singular";
    }
    return "?";
}

InitMode parse_init_mode(std::string_view text) {
    for (InitMode m : {InitMode::Standard, InitMode::SymmetricSmall, InitMode::PrincipalSingular}) {
        if (text == init_mode_name(m)) return m;
    }
    throw std::invalid_argument("unknown adapter init mode '" + std::string(text) + "'");
}

void LoraConfig::validate() const {
    if (rank < 1) throw std::invalid_argument("lora config: rank must be >= 1, got " + std::to_string(rank));
    if (!(scale >= 0.0)) throw std::invalid_argument("lora config: scale must be >= 0");
    if (sites.empty()) throw std::invalid_argument("lora config: no adapter sites selected");
}

std::string format_address(const ParamAddress& a) {
    return "L" + std::to_string(a.layer) + "." + std::string(site_name(a.site)) + "." +
           (a.matrix == Matrix::A ? "A" : "B") + "[" + std::to_string(a.flat_index) + "]";
}

std::pair<int, int> site_in_out(const ModelConfig& cfg, Site s) {
    switch (s) {
        case Site::Q:
        case Site::K:
        case Site::V: return {cfg.d_model, cfg.d_model};
        case Site::Gate:
        case Site::Up: return {cfg.d_model, cfg.d_ff};
        case Site::Down: return {cfg.d_ff, cfg.d_model};
    }
    return {0, 0};
}

AdapterLayout::AdapterLayout(const ModelConfig& model, const LoraConfig& lora) {
    model.validate();
    lora.validate();
    const auto r = static_cast<std::size_t>(lora.rank);
    for (int layer = 0; layer < model.n_layers; ++layer) {
        for (Site s : kAllSites) {
            if (!lora.sites.has(s)) continue;
            const auto [in, out] = site_in_out(model, s);
            blocks_.push_back({layer, s, Matrix::A, total_, r, static_cast<std::size_t>(in)});
            total_ += blocks_.back().size();
            blocks_.push_back({layer, s, Matrix::B, total_, static_cast<std::size_t>(out), r});
            total_ += blocks_.back().size();
        }
    }
}

const AdapterLayout::Block* AdapterLayout::find(int layer, Site site, Matrix m) const {
    for (const Block& b : blocks_) {
        if (b.layer == layer && b.site == site && b.matrix == m) return &b;
    }
    return nullptr;
}

ParamAddress AdapterLayout::address(std::size_t flat) const {
    if (flat >= total_) {
        throw std::out_of_range("adapter flat index " + std::to_string(flat) + " outside " + std::to_string(total_));
    }
    // Blocks are sorted by offset.
    std::size_t lo = 0, hi = blocks_.size();
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        if (blocks_[mid].offset <= flat) lo = mid; else hi = mid;
    }
    const Block& b = blocks_[lo];
    return {b.layer, b.site, b.matrix, flat - b.offset};
}

std::size_t AdapterLayout::index(const ParamAddress& a) const {
    const Block* b = find(a.layer, a.site, a.matrix);
    if (!b) throw std::out_of_range("address " + format_address(a) + " is not adapted");
    if (a.flat_index >= b->size()) throw std::out_of_range("address " + format_address(a) + " outside its matrix");
    return b->offset + a.flat_index;
}

std::size_t adapter_param_count(const ModelConfig& model, const LoraConfig& lora) {
    std::size_t per_layer = 0;
    for (Site s : kAllSites) {
        if (!lora.sites.has(s)) continue;
        const auto [in, out] = site_in_out(model, s);
        per_layer += static_cast<std::size_t>(lora.rank) * static_cast<std::size_t>(in + out);
    }
    return per_layer * static_cast<std::size_t>(model.n_layers);
}

}  // namespace dualpeft::model
