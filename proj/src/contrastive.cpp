#include "sdclr/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sdclr/errors.hpp"

namespace sdclr {

Temperature::Temperature(double tau) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) {
        throw InvalidParameter("temperature must be positive, got " + std::to_string(tau));
    }
}

namespace {

double dot(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

}  // namespace

double similarity(std::span<const double> u, std::span<const double> v, Temperature tau) {
    if (u.size() != v.size()) throw ContractError("similarity: dimension mismatch");
    return std::exp(dot(u, v) / tau.value());
}

double similarity(std::span<const double> u, std::span<const double> v, double tau) {
    return similarity(u, v, Temperature(tau));
}

EmbeddingBatch::EmbeddingBatch(int rows, int dim, std::vector<double> vectors,
                               std::vector<int> positive_of)
    : rows_(rows), dim_(dim), vectors_(std::move(vectors)), positive_of_(std::move(positive_of)) {
    if (rows < 0 || dim < 1) throw ContractError("embedding batch needs rows >= 0 and dim >= 1");
    if (vectors_.size() != static_cast<std::size_t>(rows) * dim) {
        throw ContractError("embedding batch data does not match rows x dim");
    }
    if (positive_of_.size() != static_cast<std::size_t>(rows)) {
        throw ContractError("pairing must name a positive for every row");
    }
    for (int i = 0; i < rows; ++i) {
        const int p = positive_of_[static_cast<std::size_t>(i)];
        if (p < 0 || p >= rows || p == i || positive_of_[static_cast<std::size_t>(p)] != i) {
            throw ContractError("pairing is not a perfect matching at row " + std::to_string(i));
        }
    }
}

EmbeddingBatch EmbeddingBatch::interleaved(int rows, int dim, std::vector<double> vectors) {
    if (rows % 2 != 0) throw ContractError("interleaved pairing needs an even row count");
    std::vector<int> pos(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) pos[static_cast<std::size_t>(i)] = i ^ 1;
    return EmbeddingBatch(rows, dim, std::move(vectors), std::move(pos));
}

std::span<const double> EmbeddingBatch::row(int i) const {
    return {vectors_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)};
}

double EmbeddingBatch::max_norm_error() const {
    double worst = 0.0;
    for (int i = 0; i < rows_; ++i) {
        const auto r = row(i);
        worst = std::max(worst, std::abs(std::sqrt(dot(r, r)) - 1.0));
    }
    return worst;
}

NtXentResult ntxent_loss(const EmbeddingBatch& batch, Temperature tau) {
    const int n = batch.rows();
    const int d = batch.dim();
    NtXentResult result;
    result.grad.assign(batch.vectors().size(), 0.0);
    result.per_anchor.assign(static_cast<std::size_t>(n), 0.0);
    if (n < 4) {
        // No negatives exist; every anchor term is -log(1).
        result.degenerate = true;
        return result;
    }
    const double inv_tau = 1.0 / tau.value();

    // logits[i][j] = v_i . v_j / tau
    std::vector<double> logits(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            const double s = dot(batch.row(i), batch.row(j)) * inv_tau;
            logits[static_cast<std::size_t>(i) * n + j] = s;
            logits[static_cast<std::size_t>(j) * n + i] = s;
        }
    }

    // coeff[i][j] = d loss / d logits[i][j], softmax over j != i minus the
    // positive indicator, scaled by 1/N.
    std::vector<double> coeff(static_cast<std::size_t>(n) * n, 0.0);
    const double inv_n = 1.0 / n;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* li = logits.data() + static_cast<std::size_t>(i) * n;
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j) {
            if (j != i) m = std::max(m, li[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            if (j != i) denom += std::exp(li[j] - m);
        }
        const int p = batch.positive_of(i);
        const double log_denom = m + std::log(denom);
        const double term = log_denom - li[p];
        result.per_anchor[static_cast<std::size_t>(i)] = term;
        total += term;
        double* ci = coeff.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            if (j != i) ci[j] = std::exp(li[j] - log_denom) * inv_n;
        }
        ci[p] -= inv_n;
    }
    result.loss = total * inv_n;

    // logits[i][j] depends on v_i and v_j symmetrically.
    for (int i = 0; i < n; ++i) {
        double* gi = result.grad.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            const double w = (coeff[static_cast<std::size_t>(i) * n + j] +
                              coeff[static_cast<std::size_t>(j) * n + i]) * inv_tau;
            if (w == 0.0) continue;
            const auto vj = batch.row(j);
            for (int k = 0; k < d; ++k) gi[k] += w * vj[static_cast<std::size_t>(k)];
        }
    }
    return result;
}

}  // namespace sdclr
