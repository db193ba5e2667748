// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

// Micro decoder-only transformer with low-rank adapters.
//
// Architecture: token + learned absolute position embeddings, then per layer
// pre-RMSNorm causal multi-head attention and a SiLU-gated MLP
// (gate/up/down), final RMSNorm and an untied output head. Linear weights are
// stored [out x in] and applied as x * W^T.
//
// Adapters attach at any of Q, K, V, Gate, Up, Down. The effective weight at
// an adapted site is W + scale * B * A with A [r x in] and B [out x r]. All
// adapter scalars live in one flat buffer ordered by ParamAddress
// (layer, site, matrix, flat index), so a flat index doubles as the address
// ordinal everywhere downstream.

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dualpeft/autodiff.hpp"
#include "dualpeft/rng.hpp"

namespace dualpeft::model {

struct ModelConfig {
    int n_layers = 2;
    int d_model = 32;
    int n_heads = 4;
    int d_ff = 64;
    int vocab_size = 48;
    int max_seq_len = 32;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

enum class Site : std::uint8_t { Q = 0, K = 1, V = 2, Gate = 3, Up = 4, Down = 5 };
inline constexpr std::array<Site, 6> kAllSites = {Site::Q, Site::K, Site::V, Site::Gate, Site::Up, Site::Down};
std::string_view site_name(Site s);

class SiteSet {
public:
    constexpr SiteSet() = default;
    constexpr explicit SiteSet(std::uint32_t bits) : bits_(bits & 0x3Fu) {}
    static SiteSet qkv() { return SiteSet(0x07u); }
    static SiteSet gud() { return SiteSet(0x38u); }
    static SiteSet all() { return SiteSet(0x3Fu); }
    // Accepts QKV, GUD, QKVGUD or a comma list such as "Q,V,Down".
    static SiteSet parse(std::string_view text);

    bool has(Site s) const { return (bits_ >> static_cast<unsigned>(s)) & 1u; }
    void add(Site s) { bits_ |= 1u << static_cast<unsigned>(s); }
    bool empty() const { return bits_ == 0; }
    std::uint32_t bits() const { return bits_; }
    std::string name() const;
    bool operator==(const SiteSet&) const = default;

private:
    std::uint32_t bits_ = 0;
};

enum class InitMode : std::uint8_t { Standard = 0, SymmetricSmall = 1, PrincipalSingular = 2 };
std::string_view init_mode_name(InitMode m);
InitMode parse_init_mode(std::string_view text);

struct LoraConfig {
    int rank = 4;
    double scale = 1.0;
    SiteSet sites = SiteSet::all();
    InitMode init_mode = InitMode::Standard;

    void validate() const;
    bool operator==(const LoraConfig&) const = default;
};

enum class Matrix : std::uint8_t { A = 0, B = 1 };

struct ParamAddress {
    int layer = 0;
    Site site = Site::Q;
    Matrix matrix = Matrix::A;
    std::size_t flat_index = 0;

    auto operator<=>(const ParamAddress&) const = default;
};

std::string format_address(const ParamAddress& a);

// Input/output widths of the base weight at a site.
std::pair<int, int> site_in_out(const ModelConfig& cfg, Site s);

// Maps adapter ParamAddresses onto flat indices for one (ModelConfig,
// LoraConfig) pair.
class AdapterLayout {
public:
    struct Block {
        int layer;
        Site site;
        Matrix matrix;
        std::size_t offset;
        std::size_t rows;
        std::size_t cols;
        std::size_t size() const { return rows * cols; }
    };

    AdapterLayout() = default;
    AdapterLayout(const ModelConfig& model, const LoraConfig& lora);

    std::size_t size() const { return total_; }
    const std::vector<Block>& blocks() const { return blocks_; }
    // Block for (layer, site, matrix), or nullptr when the site is not adapted.
    const Block* find(int layer, Site site, Matrix m) const;
    ParamAddress address(std::size_t flat) const;
    std::size_t index(const ParamAddress& a) const;

private:
    std::vector<Block> blocks_;
    std::size_t total_ = 0;
};

// Closed-form adapter scalar count: sum over sites of r * (in + out), times
// the layer count.
std::size_t adapter_param_count(const ModelConfig& model, const LoraConfig& lora);

class Model {
public:
    struct Layer {
        std::size_t attn_norm, wq, wk, wv, wo, mlp_norm, w_gate, w_up, w_down;
    };

    Model() = default;
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    std::span<const double> params() const { return params_; }
    std::span<double> params() { return params_; }
    std::size_t param_count() const { return params_.size(); }

    // Offsets into params() of every tensor.
    std::size_t tok_emb() const { return tok_emb_; }
    std::size_t pos_emb() const { return pos_emb_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t final_norm() const { return final_norm_; }
    std::size_t head() const { return head_; }
    std::size_t site_weight(int layer, Site s) const;

    bool has_adapters() const { return has_adapters_; }
    void mark_adapted() { has_adapters_ = true; }

private:
    ModelConfig cfg_;
    std::vector<double> params_;
    std::size_t tok_emb_ = 0, pos_emb_ = 0, final_norm_ = 0, head_ = 0;
    std::vector<Layer> layers_;
    bool has_adapters_ = false;
};

class AdapterSet {
public:
    AdapterSet() = default;
    AdapterSet(const ModelConfig& model, const LoraConfig& lora);

    const LoraConfig& config() const { return cfg_; }
    const AdapterLayout& layout() const { return layout_; }
    std::size_t size() const { return values_.size(); }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    std::span<double> block_values(const AdapterLayout::Block& b) { return {values_.data() + b.offset, b.size()}; }
    std::span<const double> block_values(const AdapterLayout::Block& b) const {
        return {values_.data() + b.offset, b.size()};
    }

    bool operator==(const AdapterSet& o) const { return cfg_ == o.cfg_ && values_ == o.values_; }

private:
    LoraConfig cfg_;
    AdapterLayout layout_;
    std::vector<double> values_;
};

Model init_model(const ModelConfig& cfg, std::uint64_t seed);

// Attaches adapters to `model`. Principal-singular init moves the leading
// rank-r component of each adapted base weight into the adapter and keeps the
// residual in the base. Rejects a model that already carries adapters.
AdapterSet attach_lora(Model& model, const LoraConfig& cfg, std::uint64_t seed);

struct GradSinks {
    std::span<double> base;     // empty: base weights are constants
    std::span<double> adapter;  // empty: adapter weights are constants
};

// Records the forward pass on `tape` and returns logits [T x vocab].
ad::Var forward(ad::Tape& tape, const Model& model, const AdapterSet* adapters, std::span<const int> tokens,
                GradSinks sinks = {});

// Untraced forward returning logits [T x vocab].
ad::Tensor logits(const Model& model, const AdapterSet* adapters, std::span<const int> tokens);

// Autoregressive continuation of `prompt`. Temperature 0 is greedy with the
// lowest token id winning ties. Stops after `eos` (included in the output),
// after max_new tokens, or when the context is full.
std::vector<int> sample(const Model& model, const AdapterSet* adapters, std::span<const int> prompt, int max_new,
                        double temperature, Rng& rng, int eos = -1);
std::vector<int> sample(const Model& model, const AdapterSet* adapters, std::span<const int> prompt, int max_new,
                        double temperature, std::uint64_t seed, int eos = -1);

// Checkpoint file (little-endian):
//   magic "DPFTCKPT", u32 version,
//   ModelConfig as 6 x u32 (n_layers, d_model, n_heads, d_ff, vocab, max_seq_len),
//   u32 has_lora, [u32 rank, f64 scale, u32 site bits, u32 init_mode],
//   u64 base count, f64 base values,
//   [u64 adapter count, f64 adapter values in ParamAddress order].
struct Checkpoint {
    Model model;
    std::optional<AdapterSet> adapters;
};
void save_checkpoint(const std::filesystem::path& path, const Model& model, const AdapterSet* adapters);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dualpeft::model
