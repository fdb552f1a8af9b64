#include "fewtrans/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "bytes.hpp"
#include "fewtrans/optimizer.hpp"
#include "fewtrans/rng.hpp"

namespace fewtrans {

std::string method_name(Method m) {
    switch (m) {
        case Method::LinearProbe: return "linear_probe";
        case Method::FullFinetune: return "finetune";
        case Method::BiasOnly: return "bias_only";
        case Method::LowRank: return "lora";
        case Method::Adapter: return "adapter";
    }
    return "finetune";
}

Method parse_method(const std::string& name) {
    if (name == "linear_probe") return Method::LinearProbe;
    if (name == "finetune") return Method::FullFinetune;
    if (name == "bias_only") return Method::BiasOnly;
    if (name == "lora") return Method::LowRank;
    if (name == "adapter") return Method::Adapter;
    throw Error("unknown method '" + name + "'");
}

void HyperConfig::validate() const {
    // lr_backbone 0 is the documented freeze-the-backbone degeneracy
    if (!(lr_backbone >= 0.0)) throw Error("hyper config: lr_backbone must be >= 0");
    if (!(lr_head > 0.0)) throw Error("hyper config: lr_head must be positive");
    if (epochs < 0) throw Error("hyper config: epochs must be >= 0");
}

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

SupportSet items_of(const Dataset& dataset, const Task& task, const std::vector<TaskItem>& items) {
    SupportSet out;
    out.n_cls = task.n_cls();
    for (const auto& item : items) {
        out.batch.ids.push_back(item.item_id);
        out.labels.push_back(item.label);
    }
    if (dataset.has_embeddings()) out.batch.inputs = dataset.batch_inputs(out.batch.ids);
    else out.batch.inputs = Matrix(out.batch.ids.size(), 0);
    return out;
}

}  // namespace

SupportSet support_of(const Dataset& dataset, const Task& task) {
    return items_of(dataset, task, task.support);
}

SupportSet query_of(const Dataset& dataset, const Task& task) {
    return items_of(dataset, task, task.query);
}

namespace {

bool name_is_layer_bias(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0 &&
           name.find(".lora.") == std::string::npos && name.find(".adapter.") == std::string::npos;
}

std::vector<std::string> trainable_names(Backbone& bb, Method method) {
    std::vector<std::string> names;
    for (const auto& [name, tensor] : bb.named_params()) {
        (void)tensor;
        switch (method) {
            case Method::LinearProbe: break;
            case Method::FullFinetune: names.push_back(name); break;
            case Method::BiasOnly:
                if (name_is_layer_bias(name)) names.push_back(name);
                break;
            case Method::LowRank:
                if (name.find(".lora.") != std::string::npos) names.push_back(name);
                break;
            case Method::Adapter:
                if (name.find(".adapter.") != std::string::npos) names.push_back(name);
                break;
        }
    }
    return names;
}

AdaptedClassifier fit_common(const Backbone& base, const SupportSet& support, Method method,
                             const HyperConfig& cfg, const FitOptions& options) {
    cfg.validate();
    if (support.batch.ids.empty()) throw Error("fit: empty support set");
    if (support.n_cls < 1) throw Error("fit: classifier needs at least one class");
    for (int label : support.labels)
        if (label < 0 || static_cast<std::size_t>(label) >= support.n_cls)
            throw Error("fit: support label out of range");

    auto bb = base.clone();
    if (method == Method::BiasOnly || method == Method::LowRank || method == Method::Adapter) {
        auto* mlp = dynamic_cast<MlpBackbone*>(bb.get());
        if (!mlp)
            throw Error("method '" + method_name(method) +
                        "' is not supported by this backbone type");
        if (method == Method::LowRank)
            mlp->attach_low_rank(options.lora_rank, options.lora_alpha, options.seed);
        if (method == Method::Adapter) {
            const int width =
                options.adapter_width > 0
                    ? options.adapter_width
                    : std::max(2, static_cast<int>(bb->feature_dim()) / 4);
            mlp->attach_adapters(width, options.seed);
        }
    }

    AdaptedClassifier out;
    out.method = method_name(method);
    out.initial_state = bb->snapshot();
    out.trainable = trainable_names(*bb, method);
    if (cfg.lr_backbone == 0.0) out.trainable.clear();  // zero-lr degeneracy: frozen backbone
    out.head_w = Matrix(support.n_cls, bb->feature_dim());
    out.head_b = Matrix(1, support.n_cls);

    // map trainable names to positions in the backbone gradient vector
    std::vector<std::size_t> grad_index;
    {
        auto params = bb->named_params();
        std::unordered_map<std::string, std::size_t> pos;
        for (std::size_t i = 0; i < params.size(); ++i) pos[params[i].first] = i;
        for (const auto& name : out.trainable) grad_index.push_back(pos.at(name));
    }

    AdamOptimizer opt;
    {
        auto params = bb->named_params();
        for (std::size_t i : grad_index) opt.add_param(params[i].second, cfg.lr_backbone);
    }
    opt.add_param(&out.head_w, cfg.lr_head);
    opt.add_param(&out.head_b, cfg.lr_head);

    const std::size_t n = support.batch.ids.size();
    const bool full_batch =
        options.batch_size <= 0 || static_cast<std::size_t>(options.batch_size) >= n;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        if (!full_batch) {
            TaskRng rng(options.seed, static_cast<std::uint64_t>(epoch), RngPurpose::kFit);
            rng.shuffle(order);
        }
        const std::size_t step_size = full_batch ? n : static_cast<std::size_t>(options.batch_size);
        for (std::size_t start = 0; start < n; start += step_size) {
            const std::size_t stop = std::min(n, start + step_size);
            Batch sub;
            std::vector<int> sub_labels;
            if (full_batch) {
                sub = support.batch;
                sub_labels = support.labels;
            } else {
                sub.inputs = Matrix(stop - start, support.batch.inputs.cols());
                for (std::size_t k = start; k < stop; ++k) {
                    const std::size_t src = order[k];
                    sub.ids.push_back(support.batch.ids[src]);
                    sub_labels.push_back(support.labels[src]);
                    for (std::size_t j = 0; j < support.batch.inputs.cols(); ++j)
                        sub.inputs(k - start, j) = support.batch.inputs(src, j);
                }
            }

            Matrix feats = bb->features(sub);
            Matrix logits = matmul_nt(feats, out.head_w);
            add_bias_rows(logits, out.head_b);
            Matrix dlogits;
            const double loss = softmax_xent(logits, sub_labels, &dlogits);
            if (!std::isfinite(loss))
                throw NonFiniteLossError("adaptation loss diverged", epoch);

            std::vector<Matrix> grads;
            if (!grad_index.empty()) {
                Matrix dfeats = matmul(dlogits, out.head_w);
                std::vector<Matrix> all = bb->backward(sub, dfeats);
                for (std::size_t i : grad_index) grads.push_back(std::move(all[i]));
            }
            grads.push_back(matmul_tn(dlogits, feats));
            grads.push_back(colsum(dlogits));
            opt.step(grads);
        }
    }

    out.backbone = std::move(bb);
    return out;
}

}  // namespace

AdaptedClassifier fit_linear_probe(const Backbone& base, const SupportSet& support,
                                   const HyperConfig& cfg, const FitOptions& options) {
    return fit_common(base, support, Method::LinearProbe, cfg, options);
}

AdaptedClassifier fit_full_finetune(const Backbone& base, const SupportSet& support,
                                    const HyperConfig& cfg, const FitOptions& options) {
    return fit_common(base, support, Method::FullFinetune, cfg, options);
}

AdaptedClassifier fit_peft(const Backbone& base, const SupportSet& support, Method method,
                           const HyperConfig& cfg, const FitOptions& options) {
    if (method != Method::BiasOnly && method != Method::LowRank && method != Method::Adapter)
        throw Error("fit_peft expects bias_only, lora or adapter");
    return fit_common(base, support, method, cfg, options);
}

AdaptedClassifier fit_method(const Backbone& base, const SupportSet& support, Method method,
                             const HyperConfig& cfg, const FitOptions& options) {
    return fit_common(base, support, method, cfg, options);
}

Matrix predict_logits(const AdaptedClassifier& classifier, const Batch& items) {
    Matrix feats = classifier.backbone->features(items);
    Matrix logits = matmul_nt(feats, classifier.head_w);
    add_bias_rows(logits, classifier.head_b);
    return logits;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size()) throw Error("accuracy: label count mismatch");
    if (logits.rows() == 0) throw Error("accuracy: empty logit matrix");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j)
            if (logits(i, j) > logits(i, best)) best = j;
        if (static_cast<int>(best) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(logits.rows());
}

double ncm_accuracy(const Backbone& base, const Dataset& dataset, const Task& task) {
    SupportSet support = support_of(dataset, task);
    SupportSet query = query_of(dataset, task);
    if (query.batch.ids.empty()) throw Error("ncm: task has no query items");

    Matrix sup_feats = base.features(support.batch);
    const std::size_t d = sup_feats.cols();
    const std::size_t n_cls = task.n_cls();

    std::vector<std::size_t> counts(n_cls, 0);
    Matrix means(n_cls, d);
    for (std::size_t i = 0; i < support.labels.size(); ++i) {
        const auto c = static_cast<std::size_t>(support.labels[i]);
        ++counts[c];
        for (std::size_t j = 0; j < d; ++j) means(c, j) += sup_feats(i, j);
    }
    for (std::size_t c = 0; c < n_cls; ++c)
        if (counts[c])
            for (std::size_t j = 0; j < d; ++j) means(c, j) /= static_cast<double>(counts[c]);

    Matrix q_feats = base.features(query.batch);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < q_feats.rows(); ++i) {
        double best_dist = 0.0;
        int best = -1;
        for (std::size_t c = 0; c < n_cls; ++c) {
            if (!counts[c]) continue;  // classes without support are unreachable
            double dist = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = q_feats(i, j) - means(c, j);
                dist += diff * diff;
            }
            if (best < 0 || dist < best_dist) {
                best_dist = dist;
                best = static_cast<int>(c);
            }
        }
        if (best == query.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(q_feats.rows());
}

std::string serialize_classifier(const AdaptedClassifier& classifier) {
    std::string out("FTCLS1", 6);
    detail::put_u16(out, static_cast<std::uint16_t>(classifier.method.size()));
    out += classifier.method;

    Snapshot tensors = classifier.backbone->snapshot();
    tensors.push_back({"head.W", classifier.head_w});
    tensors.push_back({"head.b", classifier.head_b});

    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        out.push_back(2);
        detail::put_u32(out, static_cast<std::uint32_t>(tensor.rows()));
        detail::put_u32(out, static_cast<std::uint32_t>(tensor.cols()));
        for (double v : tensor.values()) detail::put_f32(out, static_cast<float>(v));
    }
    return out;
}

void save_classifier(const std::string& path, const AdaptedClassifier& classifier) {
    detail::write_file_bytes(path, serialize_classifier(classifier));
}

}  // namespace fewtrans
