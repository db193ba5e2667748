// SPDX-FileCopyrightText: (c) 2026 dualpeft authors
//
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

#include "dualpeft/model.hpp"

namespace dualpeft::model {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Splits W [out x in] into scale * B * A (top-r singular directions, split
// evenly between the factors) plus a residual written back into W.
void principal_split(std::span<double> w, std::size_t out, std::size_t in, std::size_t r, double scale,
                     std::span<double> a, std::span<double> b) {
    if (scale <= 0.0) throw std::invalid_argument("principal-singular init needs a positive adapter scale");
    Eigen::Map<RowMatrix> wm(w.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    Eigen::JacobiSVD<RowMatrix> svd(wm, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const auto& u = svd.matrixU();
    const auto& v = svd.matrixV();
    const auto kept = std::min<std::size_t>(r, static_cast<std::size_t>(s.size()));
    RowMatrix principal = RowMatrix::Zero(wm.rows(), wm.cols());
    for (std::size_t k = 0; k < kept; ++k) {
        const double root = std::sqrt(s(static_cast<Eigen::Index>(k)) / scale);
        for (std::size_t j = 0; j < in; ++j) a[k * in + j] = root * v(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
        for (std::size_t i = 0; i < out; ++i) b[i * r + k] = root * u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
    Eigen::Map<const RowMatrix> am(a.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(in));
    Eigen::Map<const RowMatrix> bm(b.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(r));
    principal = scale * (bm * am);
    wm -= principal;
}

}  // namespace

AdapterSet attach_lora(Model& model, const LoraConfig& cfg, std::uint64_t seed) {
    if (model.has_adapters()) throw std::logic_error("attach_lora: model already carries adapters");
    cfg.validate();
    AdapterSet set(model.config(), cfg);
    Rng rng(seed);
    const auto r = static_cast<std::size_t>(cfg.rank);
    for (const auto& blk : set.layout().blocks()) {
        if (blk.matrix != Matrix::A) continue;
        const auto* bblk = set.layout().find(blk.layer, blk.site, Matrix::B);
        auto a = set.block_values(blk);
        auto b = set.block_values(*bblk);
        const std::size_t in = blk.cols, out = bblk->rows;
        switch (cfg.init_mode) {
            case InitMode::Standard:
                for (double& x : a) x = rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
                break;
            case InitMode::SymmetricSmall:
                for (double& x : a) x = rng.normal(0.0, 0.02);
                for (double& x : b) x = rng.normal(0.0, 0.02);
                break;
            case InitMode::PrincipalSingular:
                principal_split(model.params().subspan(model.site_weight(blk.layer, blk.site), out * in), out, in, r,
                                cfg.scale, a, b);
                break;
        }
    }
    model.mark_adapted();
    return set;
}

}  // namespace dualpeft::model
