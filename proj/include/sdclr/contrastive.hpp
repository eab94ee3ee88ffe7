#pragma once

#include <span>
#include <vector>

namespace sdclr {

/// Softmax temperature of the contrastive loss; always positive.
class Temperature {
public:
    explicit Temperature(double tau);
    double value() const { return tau_; }

private:
    double tau_;
};

constexpr double kDefaultTemperature = 0.5;

/// exp(u . v / tau).
double similarity(std::span<const double> u, std::span<const double> v, Temperature tau);
double similarity(std::span<const double> u, std::span<const double> v, double tau);

/// N x d embeddings with a perfect matching of anchors to positives.
class EmbeddingBatch {
public:
    EmbeddingBatch(int rows, int dim, std::vector<double> vectors, std::vector<int> positive_of);

    /// Rows (2i, 2i+1) form the positive pairs.
    static EmbeddingBatch interleaved(int rows, int dim, std::vector<double> vectors);

    int rows() const { return rows_; }
    int dim() const { return dim_; }
    std::span<const double> row(int i) const;
    const std::vector<double>& vectors() const { return vectors_; }
    int positive_of(int i) const { return positive_of_[static_cast<std::size_t>(i)]; }

    /// Largest deviation of any row norm from 1.
    double max_norm_error() const;

private:
    int rows_;
    int dim_;
    std::vector<double> vectors_;
    std::vector<int> positive_of_;
};

struct NtXentResult {
    double loss = 0.0;
    /// d loss / d vectors, same layout as the batch.
    std::vector<double> grad;
    std::vector<double> per_anchor;
    /// Set when the batch has no negatives; loss is then 0.
    bool degenerate = false;
};

/// Mean over all N anchors of -log(s(v, v+) / (s(v, v+) + sum over the
/// other N - 2 rows of s(v, v-))).
NtXentResult ntxent_loss(const EmbeddingBatch& batch, Temperature tau);

}  // namespace sdclr
