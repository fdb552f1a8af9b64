#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fewtrans/dataset.hpp"
#include "fewtrans/matrix.hpp"

namespace fewtrans {

struct NamedTensor {
    std::string name;
    Matrix value;
};

/// Ordered, immutable copy of every named parameter. restore(snapshot()) is
/// exact to the bit; HPE leans on that for per-configuration resets.
using Snapshot = std::vector<NamedTensor>;

enum class Nonlinearity { Tanh, ReLU };

/// Items presented to a backbone: ids plus their raw input vectors. A
/// frozen-embedding backbone resolves ids against its own table and ignores
/// the inputs; the reference MLP consumes the inputs.
struct Batch {
    std::vector<std::string> ids;
    Matrix inputs;
};

class Backbone {
public:
    virtual ~Backbone() = default;
    virtual std::unique_ptr<Backbone> clone() const = 0;

    virtual std::size_t feature_dim() const = 0;
    virtual std::size_t layer_count() const = 0;
    virtual Matrix features(const Batch& batch) const = 0;
    /// Per-layer outputs, in layer order; length equals layer_count().
    virtual std::vector<Matrix> activations(const Batch& batch) const = 0;

    /// Stable names, stable order; mutable so optimizers can update in place.
    virtual std::vector<std::pair<std::string, Matrix*>> named_params() = 0;
    virtual Snapshot snapshot() const = 0;
    virtual void restore(const Snapshot& snap) = 0;

    /// Gradient of the loss w.r.t. every named parameter, aligned with
    /// named_params() order, given dL/dfeatures.
    virtual std::vector<Matrix> backward(const Batch& batch, const Matrix& dfeatures) = 0;

    std::vector<std::pair<std::string, const Matrix*>> named_weights() const;
};

struct MlpSpec {
    int dim_in = 2;
    std::vector<int> hidden;
    int feature_dim = 2;
    Nonlinearity nonlinearity = Nonlinearity::Tanh;
};

class MlpBackbone final : public Backbone {
public:
    MlpBackbone(const MlpSpec& spec, std::uint64_t seed);

    /// W := W + (alpha/rank) * B * A on every dense layer; B zero, A small
    /// Gaussian, so the augmented map starts exactly at the original one.
    void attach_low_rank(int rank, double alpha, std::uint64_t seed);
    /// Serial bottleneck after every layer output, up-projection zero so the
    /// augmented map starts as the identity. width <= 0 picks
    /// max(2, layer_width / 4).
    void attach_adapters(int width, std::uint64_t seed);

    std::unique_ptr<Backbone> clone() const override;
    std::size_t feature_dim() const override;
    std::size_t layer_count() const override { return layers_.size(); }
    Matrix features(const Batch& batch) const override;
    std::vector<Matrix> activations(const Batch& batch) const override;
    std::vector<std::pair<std::string, Matrix*>> named_params() override;
    Snapshot snapshot() const override;
    void restore(const Snapshot& snap) override;
    std::vector<Matrix> backward(const Batch& batch, const Matrix& dfeatures) override;

    bool has_low_rank() const;
    bool has_adapters() const;

private:
    struct Layer {
        Matrix w;              // (out, in)
        Matrix b;              // (1, out)
        bool low_rank = false;
        Matrix lr_a;           // (rank, in)
        Matrix lr_b;           // (out, rank)
        double lr_scale = 0.0;
        bool adapter = false;
        Matrix ad_down_w;      // (width, out)
        Matrix ad_down_b;      // (1, width)
        Matrix ad_up_w;        // (out, width)
        Matrix ad_up_b;        // (1, out)

        Matrix effective_weight() const;
    };

    struct Trace;
    Matrix run_forward(const Batch& batch, Trace* trace) const;

    std::vector<Layer> layers_;
    Nonlinearity nl_ = Nonlinearity::Tanh;
    int dim_in_ = 0;
};

class FrozenEmbeddingBackbone final : public Backbone {
public:
    explicit FrozenEmbeddingBackbone(EmbeddingTable table);

    std::unique_ptr<Backbone> clone() const override;
    std::size_t feature_dim() const override { return table_->dim; }
    std::size_t layer_count() const override { return 1; }
    Matrix features(const Batch& batch) const override;
    std::vector<Matrix> activations(const Batch& batch) const override;
    std::vector<std::pair<std::string, Matrix*>> named_params() override { return {}; }
    Snapshot snapshot() const override { return {}; }
    void restore(const Snapshot& snap) override;
    std::vector<Matrix> backward(const Batch& batch, const Matrix& dfeatures) override;

private:
    std::shared_ptr<const EmbeddingTable> table_;
};

std::unique_ptr<MlpBackbone> reference_backbone(const MlpSpec& spec, std::uint64_t seed);
std::unique_ptr<FrozenEmbeddingBackbone> frozen_embedding_backbone(EmbeddingTable table);

/// Softmax cross-entropy over rows; returns the mean loss and fills dlogits
/// with the gradient of the mean loss.
double softmax_xent(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits);

/// Trains the backbone with a throwaway linear head over the given classes
/// (all their items), then discards the head. In-place; deterministic.
void pretrain_reference(Backbone& backbone, const Dataset& dataset,
                        const std::vector<std::string>& class_ids, int epochs, double lr);

// --- snapshot file format ("FTSNAP1", f32 payloads) ---
void save_snapshot(const std::string& path, const Snapshot& snap);
Snapshot load_snapshot(const std::string& path);

}  // namespace fewtrans
