#include "fewtrans/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "bytes.hpp"
#include "fewtrans/optimizer.hpp"
#include "fewtrans/rng.hpp"

namespace fewtrans {

namespace {

Matrix colsum(const Matrix& a) {
    Matrix out(1, a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += a(i, j);
    return out;
}

void add_bias_rows(Matrix& a, const Matrix& bias) {
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) += bias(0, j);
}

Matrix apply_nl(const Matrix& z, Nonlinearity nl) {
    Matrix out = z;
    if (nl == Nonlinearity::Tanh) {
        for (double& v : out.values()) v = std::tanh(v);
    } else {
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    }
    return out;
}

// derivative expressed through the activation output (valid for tanh and relu)
Matrix nl_grad_from_output(const Matrix& dout, const Matrix& act_out, Nonlinearity nl) {
    Matrix g = dout;
    if (nl == Nonlinearity::Tanh) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double a = act_out.values()[i];
            g.values()[i] *= 1.0 - a * a;
        }
    } else {
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(act_out.values()[i] > 0.0)) g.values()[i] = 0.0;
    }
    return g;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale, TaskRng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = scale * rng.normal();
    return m;
}

}  // namespace

std::vector<std::pair<std::string, const Matrix*>> Backbone::named_weights() const {
    auto mut = const_cast<Backbone*>(this)->named_params();
    std::vector<std::pair<std::string, const Matrix*>> out;
    out.reserve(mut.size());
    for (const auto& [name, ptr] : mut) out.emplace_back(name, ptr);
    return out;
}

Matrix MlpBackbone::Layer::effective_weight() const {
    if (!low_rank) return w;
    Matrix eff = w;
    axpy_inplace(eff, lr_scale, matmul(lr_b, lr_a));
    return eff;
}

MlpBackbone::MlpBackbone(const MlpSpec& spec, std::uint64_t seed) {
    if (spec.dim_in < 1 || spec.feature_dim < 1)
        throw Error("mlp spec: dimensions must be >= 1");
    for (int h : spec.hidden)
        if (h < 1) throw Error("mlp spec: hidden widths must be >= 1");
    nl_ = spec.nonlinearity;
    dim_in_ = spec.dim_in;

    std::vector<int> widths;
    widths.push_back(spec.dim_in);
    for (int h : spec.hidden) widths.push_back(h);
    widths.push_back(spec.feature_dim);

    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        TaskRng rng(seed, i, RngPurpose::kInit);
        Layer layer;
        const auto in = static_cast<std::size_t>(widths[i]);
        const auto out = static_cast<std::size_t>(widths[i + 1]);
        layer.w = gaussian_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng);
        layer.b = Matrix(1, out);
        layers_.push_back(std::move(layer));
    }
}

void MlpBackbone::attach_low_rank(int rank, double alpha, std::uint64_t seed) {
    if (rank < 1) throw Error("low-rank rank must be >= 1");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        if (layer.low_rank) throw Error("low-rank factors already attached");
        TaskRng rng(seed, i, RngPurpose::kInit, 1);
        const std::size_t in = layer.w.cols(), out = layer.w.rows();
        layer.low_rank = true;
        layer.lr_scale = alpha / static_cast<double>(rank);
        layer.lr_a = gaussian_matrix(static_cast<std::size_t>(rank), in,
                                     1.0 / std::sqrt(static_cast<double>(in)), rng);
        layer.lr_b = Matrix(out, static_cast<std::size_t>(rank));
    }
}

void MlpBackbone::attach_adapters(int width, std::uint64_t seed) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        if (layer.adapter) throw Error("adapters already attached");
        TaskRng rng(seed, i, RngPurpose::kInit, 2);
        const std::size_t out = layer.w.rows();
        const std::size_t w =
            width > 0 ? static_cast<std::size_t>(width)
                      : std::max<std::size_t>(2, out / 4);
        layer.adapter = true;
        layer.ad_down_w =
            gaussian_matrix(w, out, 1.0 / std::sqrt(static_cast<double>(out)), rng);
        layer.ad_down_b = Matrix(1, w);
        layer.ad_up_w = Matrix(out, w);
        layer.ad_up_b = Matrix(1, out);
    }
}

std::unique_ptr<Backbone> MlpBackbone::clone() const {
    return std::make_unique<MlpBackbone>(*this);
}

std::size_t MlpBackbone::feature_dim() const { return layers_.back().w.rows(); }

bool MlpBackbone::has_low_rank() const { return !layers_.empty() && layers_[0].low_rank; }
bool MlpBackbone::has_adapters() const { return !layers_.empty() && layers_[0].adapter; }

struct MlpBackbone::Trace {
    std::vector<Matrix> inputs;       // x fed to each layer
    std::vector<Matrix> pre_adapter;  // activation output before the adapter
    std::vector<Matrix> adapter_mid;  // bottleneck activation t
    std::vector<Matrix> outputs;      // layer output
};

Matrix MlpBackbone::run_forward(const Batch& batch, Trace* trace) const {
    if (batch.inputs.cols() != static_cast<std::size_t>(dim_in_))
        throw Error("mlp forward: input dim " + std::to_string(batch.inputs.cols()) +
                    ", expected " + std::to_string(dim_in_));
    Matrix h = batch.inputs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        if (trace) trace->inputs.push_back(h);
        Matrix z = matmul_nt(h, layer.effective_weight());
        add_bias_rows(z, layer.b);
        Matrix a = i + 1 < layers_.size() ? apply_nl(z, nl_) : std::move(z);
        if (trace) trace->pre_adapter.push_back(a);
        if (layer.adapter) {
            Matrix s = matmul_nt(a, layer.ad_down_w);
            add_bias_rows(s, layer.ad_down_b);
            Matrix t = apply_nl(s, nl_);
            if (trace) trace->adapter_mid.push_back(t);
            Matrix up = matmul_nt(t, layer.ad_up_w);
            add_bias_rows(up, layer.ad_up_b);
            add_inplace(a, up);
        } else if (trace) {
            trace->adapter_mid.emplace_back();
        }
        if (trace) trace->outputs.push_back(a);
        h = std::move(a);
    }
    // non-finite features surface as a non-finite loss in the fit loop,
    // which owns the epoch context for the error
    return h;
}

Matrix MlpBackbone::features(const Batch& batch) const { return run_forward(batch, nullptr); }

std::vector<Matrix> MlpBackbone::activations(const Batch& batch) const {
    Trace trace;
    run_forward(batch, &trace);
    return trace.outputs;
}

std::vector<std::pair<std::string, Matrix*>> MlpBackbone::named_params() {
    std::vector<std::pair<std::string, Matrix*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        const std::string prefix = "layer" + std::to_string(i) + ".";
        out.emplace_back(prefix + "W", &layer.w);
        out.emplace_back(prefix + "b", &layer.b);
        if (layer.low_rank) {
            out.emplace_back(prefix + "lora.A", &layer.lr_a);
            out.emplace_back(prefix + "lora.B", &layer.lr_b);
        }
        if (layer.adapter) {
            out.emplace_back(prefix + "adapter.down.W", &layer.ad_down_w);
            out.emplace_back(prefix + "adapter.down.b", &layer.ad_down_b);
            out.emplace_back(prefix + "adapter.up.W", &layer.ad_up_w);
            out.emplace_back(prefix + "adapter.up.b", &layer.ad_up_b);
        }
    }
    return out;
}

Snapshot MlpBackbone::snapshot() const {
    Snapshot snap;
    for (const auto& [name, tensor] : named_weights()) snap.push_back({name, *tensor});
    return snap;
}

void MlpBackbone::restore(const Snapshot& snap) {
    auto params = named_params();
    if (snap.size() != params.size())
        throw Error("restore: snapshot has " + std::to_string(snap.size()) + " tensors, mlp has " +
                    std::to_string(params.size()));
    for (std::size_t i = 0; i < snap.size(); ++i) {
        if (snap[i].name != params[i].first)
            throw Error("restore: tensor name mismatch ('" + snap[i].name + "' vs '" +
                        params[i].first + "')");
        if (!snap[i].value.same_shape(*params[i].second))
            throw Error("restore: shape mismatch for '" + snap[i].name + "'");
        *params[i].second = snap[i].value;
    }
}

std::vector<Matrix> MlpBackbone::backward(const Batch& batch, const Matrix& dfeatures) {
    Trace trace;
    Matrix feats = run_forward(batch, &trace);
    if (!dfeatures.same_shape(feats)) throw Error("backward: dfeatures shape mismatch");

    // gradients per layer, assembled into named_params() order at the end
    struct LayerGrads {
        Matrix w, b, lr_a, lr_b, ad_down_w, ad_down_b, ad_up_w, ad_up_b;
    };
    std::vector<LayerGrads> grads(layers_.size());

    Matrix d_out = dfeatures;
    for (std::size_t ri = layers_.size(); ri-- > 0;) {
        const Layer& layer = layers_[ri];
        LayerGrads& g = grads[ri];

        Matrix d_pre = d_out;
        if (layer.adapter) {
            const Matrix& t = trace.adapter_mid[ri];
            const Matrix& a_pre = trace.pre_adapter[ri];
            g.ad_up_w = matmul_tn(d_out, t);
            g.ad_up_b = colsum(d_out);
            Matrix dt = matmul(d_out, layer.ad_up_w);
            Matrix ds = nl_grad_from_output(dt, t, nl_);
            g.ad_down_w = matmul_tn(ds, a_pre);
            g.ad_down_b = colsum(ds);
            d_pre = d_out;
            add_inplace(d_pre, matmul(ds, layer.ad_down_w));
        }

        Matrix dz = ri + 1 < layers_.size()
                        ? nl_grad_from_output(d_pre, trace.pre_adapter[ri], nl_)
                        : std::move(d_pre);
        const Matrix w_eff = layer.effective_weight();
        g.w = matmul_tn(dz, trace.inputs[ri]);
        g.b = colsum(dz);
        if (layer.low_rank) {
            g.lr_a = matmul_tn(layer.lr_b, g.w);
            scale_inplace(g.lr_a, layer.lr_scale);
            g.lr_b = matmul_nt(g.w, layer.lr_a);
            scale_inplace(g.lr_b, layer.lr_scale);
        }
        if (ri > 0) d_out = matmul(dz, w_eff);
    }

    std::vector<Matrix> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer& layer = layers_[i];
        out.push_back(std::move(grads[i].w));
        out.push_back(std::move(grads[i].b));
        if (layer.low_rank) {
            out.push_back(std::move(grads[i].lr_a));
            out.push_back(std::move(grads[i].lr_b));
        }
        if (layer.adapter) {
            out.push_back(std::move(grads[i].ad_down_w));
            out.push_back(std::move(grads[i].ad_down_b));
            out.push_back(std::move(grads[i].ad_up_w));
            out.push_back(std::move(grads[i].ad_up_b));
        }
    }
    return out;
}

FrozenEmbeddingBackbone::FrozenEmbeddingBackbone(EmbeddingTable table) {
    if (table.rows.empty()) throw Error("frozen backbone: empty embedding table");
    table.rebuild_index();
    table_ = std::make_shared<const EmbeddingTable>(std::move(table));
}

std::unique_ptr<Backbone> FrozenEmbeddingBackbone::clone() const {
    return std::make_unique<FrozenEmbeddingBackbone>(*this);
}

Matrix FrozenEmbeddingBackbone::features(const Batch& batch) const {
    Matrix out(batch.ids.size(), table_->dim);
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
        const std::vector<float>* row = table_->find(batch.ids[i]);
        if (!row) throw Error("frozen backbone: unknown item id '" + batch.ids[i] + "'");
        for (std::size_t j = 0; j < row->size(); ++j) out(i, j) = static_cast<double>((*row)[j]);
    }
    return out;
}

std::vector<Matrix> FrozenEmbeddingBackbone::activations(const Batch& batch) const {
    return {features(batch)};
}

void FrozenEmbeddingBackbone::restore(const Snapshot& snap) {
    if (!snap.empty()) throw Error("restore: frozen backbone has no parameters");
}

std::vector<Matrix> FrozenEmbeddingBackbone::backward(const Batch& batch,
                                                      const Matrix& dfeatures) {
    (void)batch;
    (void)dfeatures;
    return {};
}

std::unique_ptr<MlpBackbone> reference_backbone(const MlpSpec& spec, std::uint64_t seed) {
    return std::make_unique<MlpBackbone>(spec, seed);
}

std::unique_ptr<FrozenEmbeddingBackbone> frozen_embedding_backbone(EmbeddingTable table) {
    return std::make_unique<FrozenEmbeddingBackbone>(std::move(table));
}

double softmax_xent(const Matrix& logits, const std::vector<int>& labels, Matrix* dlogits) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (labels.size() != n) throw Error("softmax_xent: label count mismatch");
    if (dlogits) *dlogits = Matrix(n, c);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw Error("softmax_xent: label out of range");
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits(i, j) - mx);
        const double logz = mx + std::log(denom);
        loss += logz - logits(i, static_cast<std::size_t>(y));
        if (dlogits) {
            for (std::size_t j = 0; j < c; ++j) {
                double p = std::exp(logits(i, j) - logz);
                (*dlogits)(i, j) = (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) /
                                   static_cast<double>(n);
            }
        }
    }
    return loss / static_cast<double>(n);
}

void pretrain_reference(Backbone& backbone, const Dataset& dataset,
                        const std::vector<std::string>& class_ids, int epochs, double lr) {
    if (epochs < 0) throw Error("pretrain: epochs must be >= 0");
    if (epochs == 0) return;
    if (!(lr > 0.0)) throw Error("pretrain: lr must be positive");

    Batch batch;
    std::vector<int> labels;
    for (std::size_t pos = 0; pos < class_ids.size(); ++pos) {
        int idx = dataset.class_index(class_ids[pos]);
        if (idx < 0) throw Error("pretrain: unknown class '" + class_ids[pos] + "'");
        for (const auto& item : dataset.class_at(static_cast<std::size_t>(idx)).items) {
            batch.ids.push_back(item.id);
            labels.push_back(static_cast<int>(pos));
        }
    }
    if (batch.ids.empty()) throw Error("pretrain: source classes have no items");
    batch.inputs = dataset.batch_inputs(batch.ids);

    const std::size_t n_cls = class_ids.size();
    Matrix head_w(n_cls, backbone.feature_dim());
    Matrix head_b(1, n_cls);

    AdamOptimizer opt;
    auto params = backbone.named_params();
    for (auto& [name, tensor] : params) {
        (void)name;
        opt.add_param(tensor, lr);
    }
    opt.add_param(&head_w, lr);
    opt.add_param(&head_b, lr);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Matrix feats = backbone.features(batch);
        Matrix logits = matmul_nt(feats, head_w);
        add_bias_rows(logits, head_b);
        Matrix dlogits;
        const double loss = softmax_xent(logits, labels, &dlogits);
        if (!std::isfinite(loss)) throw NonFiniteLossError("pretraining loss diverged", epoch);

        Matrix dfeats = matmul(dlogits, head_w);
        std::vector<Matrix> grads = backbone.backward(batch, dfeats);
        grads.push_back(matmul_tn(dlogits, feats));
        grads.push_back(colsum(dlogits));
        opt.step(grads);
    }
}

// --- snapshot file IO ---

namespace {
constexpr char kSnapshotMagic[] = "FTSNAP1";
}

void save_snapshot(const std::string& path, const Snapshot& snap) {
    std::string out(kSnapshotMagic, 7);
    detail::put_u32(out, static_cast<std::uint32_t>(snap.size()));
    for (const auto& [name, tensor] : snap) {
        if (name.size() > 0xffff) throw Error("snapshot tensor name too long");
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(2);  // rank is always 2 here
        detail::put_u32(out, static_cast<std::uint32_t>(tensor.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(tensor.cols()));
        for (double v : tensor.values()) detail::put_f32(out, static_cast<float>(v));
    }
    detail::write_file_bytes(path, out);
}

Snapshot load_snapshot(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    const std::string what = "snapshot '" + path + "'";
    if (bytes.size() < 7 || bytes.compare(0, 7, kSnapshotMagic) != 0)
        throw Error(what + ": bad magic");
    detail::ByteReader r(bytes, what, 7);
    const std::uint32_t count = r.u32();
    Snapshot snap;
    snap.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        NamedTensor rec;
        rec.name = r.str(name_len);
        const std::uint8_t rank = r.u8();
        if (rank != 2) throw Error(what + ": unsupported tensor rank");
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        rec.value = Matrix(rows, cols);
        for (std::size_t k = 0; k < rec.value.size(); ++k)
            rec.value.values()[k] = static_cast<double>(r.f32());
        snap.push_back(std::move(rec));
    }
    if (!r.at_end()) throw Error(what + ": trailing bytes after payload");
    return snap;
}

}  // namespace fewtrans
