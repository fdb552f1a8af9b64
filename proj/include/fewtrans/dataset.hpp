#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fewtrans/errors.hpp"
#include "fewtrans/matrix.hpp"

namespace fewtrans {

/// One item of a class; `group` marks items that must not co-occur in a task
/// (frames of one video clip, for instance). Empty group means unconstrained.
struct ItemRef {
    std::string id;
    std::string group;
};

struct ClassEntry {
    std::string id;
    std::string display_name;
    std::vector<ItemRef> items;
};

enum class ItemSourceKind { EmbeddingFile, ImageFolder, Synthetic };

struct ItemSourceSpec {
    ItemSourceKind kind = ItemSourceKind::EmbeddingFile;
    std::string path;  // file/folder path, or a synthetic parameter echo; may be empty until bound
};

struct HierarchyEdge {
    std::string parent;
    std::string child;  // another internal node or a class id
};

struct DatasetManifest {
    std::string name;
    std::vector<ClassEntry> classes;
    ItemSourceSpec item_source;
    std::vector<HierarchyEdge> hierarchy;
    std::string notes;
};

/// Disjoint base/novel class partition; vectors keep manifest order.
struct ClassSplit {
    std::vector<std::string> base;
    std::vector<std::string> novel;
};

/// item id -> feature vector, all of one length. Values are carried as f32
/// so a table loaded from disk writes back byte-identically.
struct EmbeddingTable {
    std::uint32_t dim = 0;
    std::vector<std::pair<std::string, std::vector<float>>> rows;

    const std::vector<float>* find(const std::string& id) const;
    void rebuild_index();

private:
    std::unordered_map<std::string, std::size_t> index_;
};

struct SyntheticSpec {
    std::string name = "synthetic";
    int n_classes = 2;
    int items_per_class = 2;
    int dim = 2;
    double separation = 1.0;
};

/// A registered dataset: validated manifest plus (optionally) bound features.
class Dataset {
public:
    const DatasetManifest& manifest() const { return manifest_; }
    const std::string& name() const { return manifest_.name; }
    std::size_t n_classes() const { return manifest_.classes.size(); }
    const ClassEntry& class_at(std::size_t i) const { return manifest_.classes[i]; }
    /// -1 if absent
    int class_index(const std::string& id) const;

    bool has_embeddings() const { return embeddings_ != nullptr; }
    const EmbeddingTable& embeddings() const;
    void attach_embeddings(EmbeddingTable table);

    /// Raw input vectors for the given item ids (rows in request order).
    Matrix batch_inputs(const std::vector<std::string>& item_ids) const;

    std::size_t input_dim() const;

private:
    friend class DatasetRegistry;
    DatasetManifest manifest_;
    std::shared_ptr<const EmbeddingTable> embeddings_;
};

using DatasetHandle = std::shared_ptr<const Dataset>;

class DatasetRegistry {
public:
    /// Validates the manifest and freezes it. Throws on duplicate names,
    /// duplicate class/item ids, empty display names, broken group
    /// partitions or a malformed hierarchy.
    DatasetHandle register_dataset(DatasetManifest manifest);
    /// Same, with features bound up front.
    DatasetHandle register_dataset(DatasetManifest manifest, EmbeddingTable table);

    DatasetHandle find(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    std::map<std::string, std::shared_ptr<Dataset>> datasets_;
};

/// Seeded base/novel partition with |base| = round(ratio * n), clamped so
/// both sides stay nonempty.
ClassSplit split_base_novel(const DatasetHandle& handle, double ratio, std::uint64_t seed);

/// Gaussian clusters with means on a scaled simplex; the embedding table is
/// attached to the returned dataset. Deterministic in the seed.
DatasetHandle generate_synthetic_dataset(DatasetRegistry& registry, const SyntheticSpec& spec,
                                         std::uint64_t seed);

// --- embedding file format ("FTEB1") ---
EmbeddingTable load_embeddings(const std::string& path, std::uint32_t expect_dim = 0);
void write_embeddings(const std::string& path, const EmbeddingTable& table);

// --- manifest text format ---
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& manifest,
                    const ClassSplit* split = nullptr);
/// Split lines ("base"/"novel") are optional in a manifest file.
std::optional<ClassSplit> read_manifest_split(const std::string& path);

/// Identifiers appear inside line-oriented text formats, so the charset is
/// restricted. Throws on violation.
void validate_identifier(const std::string& id, const char* what);

}  // namespace fewtrans
