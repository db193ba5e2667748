// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include "dualpeft/binio.hpp"
#include "dualpeft/model.hpp"

namespace dualpeft::model {

namespace {
constexpr io::Magic kMagic = {'D', 'P', 'F', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const AdapterSet* adapters) {
    io::BinaryWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    const ModelConfig& c = model.config();
    for (int v : {c.n_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_seq_len}) w.u32(static_cast<std::uint32_t>(v));
    w.u32(adapters ? 1u : 0u);
    if (adapters) {
        const LoraConfig& l = adapters->config();
        w.u32(static_cast<std::uint32_t>(l.rank));
        w.f64(l.scale);
        w.u32(l.sites.bits());
        w.u32(static_cast<std::uint32_t>(l.init_mode));
    }
    w.u64(model.param_count());
    w.f64s(model.params());
    if (adapters) {
        w.u64(adapters->size());
        w.f64s(adapters->values());
    }
    w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto r = io::BinaryReader::open(path, "checkpoint");
    r.expect_magic(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw io::FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kVersion) + ")");
    }
    ModelConfig c;
    c.n_layers = static_cast<int>(r.u32());
    c.d_model = static_cast<int>(r.u32());
    c.n_heads = static_cast<int>(r.u32());
    c.d_ff = static_cast<int>(r.u32());
    c.vocab_size = static_cast<int>(r.u32());
    c.max_seq_len = static_cast<int>(r.u32());
    const bool has_lora = r.u32() != 0;
    LoraConfig l;
    if (has_lora) {
        l.rank = static_cast<int>(r.u32());
        l.scale = r.f64();
        l.sites = SiteSet(r.u32());
        const std::uint32_t mode = r.u32();
        if (mode > 2) throw io::FormatError("checkpoint has unknown adapter init mode " + std::to_string(mode));
        l.init_mode = static_cast<InitMode>(mode);
    }
    Checkpoint ck{Model(c), std::nullopt};
    const std::uint64_t base_n = r.u64();
    if (base_n != ck.model.param_count()) {
        throw io::FormatError("checkpoint base tensor count " + std::to_string(base_n) + " does not match config (" +
                              std::to_string(ck.model.param_count()) + ")");
    }
    const auto base = r.f64s(base_n);
    std::copy(base.begin(), base.end(), ck.model.params().begin());
    if (has_lora) {
        AdapterSet set(c, l);
        const std::uint64_t n = r.u64();
        if (n != set.size()) {
            throw io::FormatError("checkpoint adapter count " + std::to_string(n) + " does not match config (" +
                                  std::to_string(set.size()) + ")");
        }
        const auto vals = r.f64s(n);
        std::copy(vals.begin(), vals.end(), set.values().begin());
        ck.model.mark_adapted();
        ck.adapters = std::move(set);
    }
    r.expect_end();
    return ck;
}

}  // namespace dualpeft::model
