#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fewtrans/backbone.hpp"
#include "fewtrans/dataset.hpp"
#include "fewtrans/sampler.hpp"

namespace fewtrans {

enum class Method { LinearProbe, FullFinetune, BiasOnly, LowRank, Adapter };

std::string method_name(Method m);
Method parse_method(const std::string& name);

/// The three tuned knobs of an adaptation run.
struct HyperConfig {
    double lr_backbone = 1e-3;
    double lr_head = 1e-2;
    int epochs = 10;
    std::string method;

    void validate() const;
};

struct FitOptions {
    std::uint64_t seed = 0;  // keys augmentation init and batch shuffling
    int batch_size = 0;      // 0 = full batch
    int lora_rank = 4;
    double lora_alpha = 4.0;
    int adapter_width = 0;  // 0 picks max(2, width/4) per layer
};

struct SupportSet {
    Batch batch;
    std::vector<int> labels;
    std::size_t n_cls = 0;
};

SupportSet support_of(const Dataset& dataset, const Task& task);
SupportSet query_of(const Dataset& dataset, const Task& task);

/// Adapted parameters plus everything needed to reproduce predictions:
/// the adapted backbone copy, the linear head, and the post-attachment
/// initial snapshot kept for parameter-shift analysis.
struct AdaptedClassifier {
    std::unique_ptr<Backbone> backbone;
    Matrix head_w;  // (n_cls, feature_dim)
    Matrix head_b;  // (1, n_cls)
    Snapshot initial_state;
    std::vector<std::string> class_ids;
    std::string method;
    std::vector<std::string> trainable;  // backbone parameter names that were trained
};

AdaptedClassifier fit_linear_probe(const Backbone& base, const SupportSet& support,
                                   const HyperConfig& cfg, const FitOptions& options = {});
AdaptedClassifier fit_full_finetune(const Backbone& base, const SupportSet& support,
                                    const HyperConfig& cfg, const FitOptions& options = {});
/// method must be BiasOnly, LowRank or Adapter.
AdaptedClassifier fit_peft(const Backbone& base, const SupportSet& support, Method method,
                           const HyperConfig& cfg, const FitOptions& options = {});
/// Dispatch on any method.
AdaptedClassifier fit_method(const Backbone& base, const SupportSet& support, Method method,
                             const HyperConfig& cfg, const FitOptions& options = {});

/// Raw affine scores (no softmax), (n_items, n_cls). Pure.
Matrix predict_logits(const AdaptedClassifier& classifier, const Batch& items);

/// argmax match rate; ties break toward the lowest class index.
double accuracy(const Matrix& logits, const std::vector<int>& labels);

/// Nearest-class-mean on the frozen base backbone; the no-adaptation
/// baseline for adaptation-gain reporting.
double ncm_accuracy(const Backbone& base, const Dataset& dataset, const Task& task);

/// "FTCLS1" blob: method identifier + every tensor (backbone, then head)
/// in the snapshot record format.
std::string serialize_classifier(const AdaptedClassifier& classifier);
void save_classifier(const std::string& path, const AdaptedClassifier& classifier);

}  // namespace fewtrans
