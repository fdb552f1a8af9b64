#include "fewtrans/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "bytes.hpp"
#include "fewtrans/rng.hpp"

namespace fewtrans {

namespace {

bool identifier_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-' ||
           c == '/' || c == '+';
}

std::string pad_index(int value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

void validate_identifier(const std::string& id, const char* what) {
    if (id.empty()) throw Error(std::string(what) + ": empty identifier");
    for (char c : id)
        if (!identifier_char(c))
            throw Error(std::string(what) + ": invalid character in identifier '" + id + "'");
}

const std::vector<float>* EmbeddingTable::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return nullptr;
    return &rows[it->second].second;
}

void EmbeddingTable::rebuild_index() {
    index_.clear();
    index_.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) index_[rows[i].first] = i;
}

int Dataset::class_index(const std::string& id) const {
    for (std::size_t i = 0; i < manifest_.classes.size(); ++i)
        if (manifest_.classes[i].id == id) return static_cast<int>(i);
    return -1;
}

const EmbeddingTable& Dataset::embeddings() const {
    if (!embeddings_) throw Error("dataset '" + name() + "' has no embeddings bound");
    return *embeddings_;
}

void Dataset::attach_embeddings(EmbeddingTable table) {
    table.rebuild_index();
    for (const auto& cls : manifest_.classes)
        for (const auto& item : cls.items)
            if (!table.find(item.id))
                throw Error("embedding table missing item '" + item.id + "' of dataset '" +
                            name() + "'");
    embeddings_ = std::make_shared<const EmbeddingTable>(std::move(table));
}

Matrix Dataset::batch_inputs(const std::vector<std::string>& item_ids) const {
    const EmbeddingTable& table = embeddings();
    Matrix out(item_ids.size(), table.dim);
    for (std::size_t i = 0; i < item_ids.size(); ++i) {
        const std::vector<float>* row = table.find(item_ids[i]);
        if (!row) throw Error("unknown item id '" + item_ids[i] + "'");
        for (std::size_t j = 0; j < row->size(); ++j) out(i, j) = static_cast<double>((*row)[j]);
    }
    return out;
}

std::size_t Dataset::input_dim() const { return embeddings().dim; }

namespace {

void validate_manifest(const DatasetManifest& m) {
    validate_identifier(m.name, "dataset name");
    if (m.classes.empty()) throw Error("manifest '" + m.name + "' declares no classes");

    std::unordered_set<std::string> class_ids;
    std::unordered_set<std::string> item_ids;
    for (const auto& cls : m.classes) {
        validate_identifier(cls.id, "class id");
        if (!class_ids.insert(cls.id).second)
            throw Error("duplicate class id '" + cls.id + "' in dataset '" + m.name + "'");
        if (cls.display_name.empty())
            throw Error("class '" + cls.id + "' has an empty display name");
        for (const auto& item : cls.items) {
            validate_identifier(item.id, "item id");
            if (!item_ids.insert(item.id).second)
                throw Error("duplicate item id '" + item.id + "' in dataset '" + m.name + "'");
            if (!item.group.empty()) validate_identifier(item.group, "group id");
        }
    }

    if (m.hierarchy.empty()) return;

    // Hierarchy must be a forest whose leaves are exactly dataset classes.
    std::unordered_map<std::string, std::string> parent_of;
    std::unordered_set<std::string> parents;
    for (const auto& e : m.hierarchy) {
        validate_identifier(e.parent, "hierarchy node");
        validate_identifier(e.child, "hierarchy node");
        if (class_ids.count(e.parent))
            throw Error("hierarchy: class '" + e.parent + "' used as an internal node");
        if (!parent_of.emplace(e.child, e.parent).second)
            throw Error("hierarchy: node '" + e.child + "' has two parents");
        parents.insert(e.parent);
    }
    for (const auto& [child, parent] : parent_of) {
        // walk to the root; revisiting a node means a cycle
        std::unordered_set<std::string> seen{child};
        std::string cur = parent;
        while (true) {
            if (!seen.insert(cur).second) throw Error("hierarchy: cycle through '" + cur + "'");
            auto it = parent_of.find(cur);
            if (it == parent_of.end()) break;
            cur = it->second;
        }
    }
    for (const auto& p : parents)
        if (!parent_of.count(p) && class_ids.count(p))
            throw Error("hierarchy: class '" + p + "' cannot be a root");
    // every leaf (a child that is never a parent) must be a class
    for (const auto& [child, parent] : parent_of) {
        (void)parent;
        if (!parents.count(child) && !class_ids.count(child))
            throw Error("hierarchy: leaf '" + child + "' is not a dataset class");
    }
}

}  // namespace

DatasetHandle DatasetRegistry::register_dataset(DatasetManifest manifest) {
    validate_manifest(manifest);
    if (datasets_.count(manifest.name))
        throw Error("dataset '" + manifest.name + "' already registered");
    auto ds = std::make_shared<Dataset>();
    ds->manifest_ = std::move(manifest);
    datasets_[ds->name()] = ds;
    return ds;
}

DatasetHandle DatasetRegistry::register_dataset(DatasetManifest manifest, EmbeddingTable table) {
    validate_manifest(manifest);
    if (datasets_.count(manifest.name))
        throw Error("dataset '" + manifest.name + "' already registered");
    auto ds = std::make_shared<Dataset>();
    ds->manifest_ = std::move(manifest);
    ds->attach_embeddings(std::move(table));
    datasets_[ds->name()] = ds;
    return ds;
}

DatasetHandle DatasetRegistry::find(const std::string& name) const {
    auto it = datasets_.find(name);
    if (it == datasets_.end()) throw Error("unknown dataset '" + name + "'");
    return it->second;
}

std::vector<std::string> DatasetRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : datasets_) {
        (void)v;
        out.push_back(k);
    }
    return out;
}

ClassSplit split_base_novel(const DatasetHandle& handle, double ratio, std::uint64_t seed) {
    const std::size_t n = handle->n_classes();
    if (n < 2) throw Error("split_base_novel: dataset has a single class");
    if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split_base_novel: ratio must be in (0,1)");

    std::size_t n_base =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    n_base = std::max<std::size_t>(1, std::min(n_base, n - 1));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    TaskRng rng(seed, 0, RngPurpose::kSplit);
    rng.shuffle(order);

    std::vector<bool> is_base(n, false);
    for (std::size_t i = 0; i < n_base; ++i) is_base[order[i]] = true;

    ClassSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& id = handle->class_at(i).id;
        (is_base[i] ? split.base : split.novel).push_back(id);
    }
    return split;
}

DatasetHandle generate_synthetic_dataset(DatasetRegistry& registry, const SyntheticSpec& spec,
                                         std::uint64_t seed) {
    if (spec.n_classes < 2 || spec.items_per_class < 2 || spec.dim < 2)
        throw Error("synthetic spec: need n_classes >= 2, items_per_class >= 2, dim >= 2");
    if (spec.separation < 0.0) throw Error("synthetic spec: separation must be >= 0");

    const int n = spec.n_classes;
    const int dim = spec.dim;
    const double scale = spec.separation / std::sqrt(2.0);

    // Cluster means: a centered regular simplex (pairwise distance =
    // separation) pushed through a seed-keyed signed permutation of the
    // coordinates. When classes outnumber dimensions an exact simplex does
    // not fit; random directions take over.
    std::vector<std::vector<double>> means(n, std::vector<double>(dim, 0.0));
    if (n <= dim) {
        for (int c = 0; c < n; ++c) {
            for (int d = 0; d < n; ++d)
                means[c][d] = scale * ((d == c ? 1.0 : 0.0) - 1.0 / static_cast<double>(n));
        }
        TaskRng rng(seed, 0, RngPurpose::kInit);
        std::vector<int> perm(dim);
        for (int d = 0; d < dim; ++d) perm[d] = d;
        rng.shuffle(perm);
        std::vector<double> sign(dim);
        for (int d = 0; d < dim; ++d) sign[d] = rng.next_u64() & 1 ? 1.0 : -1.0;
        for (int c = 0; c < n; ++c) {
            std::vector<double> rotated(dim, 0.0);
            for (int d = 0; d < dim; ++d) rotated[perm[d]] = sign[d] * means[c][d];
            means[c] = std::move(rotated);
        }
    } else {
        for (int c = 0; c < n; ++c) {
            TaskRng rng(seed, static_cast<std::uint64_t>(c), RngPurpose::kInit);
            double norm_sq = 0.0;
            for (int d = 0; d < dim; ++d) {
                means[c][d] = rng.normal();
                norm_sq += means[c][d] * means[c][d];
            }
            const double inv = norm_sq > 0 ? scale / std::sqrt(norm_sq) : 0.0;
            for (int d = 0; d < dim; ++d) means[c][d] *= inv;
        }
    }

    const int cls_width = static_cast<int>(std::to_string(n - 1).size());
    const int item_width = static_cast<int>(std::to_string(spec.items_per_class - 1).size());

    DatasetManifest manifest;
    manifest.name = spec.name;
    manifest.item_source.kind = ItemSourceKind::Synthetic;
    {
        std::ostringstream echo;
        echo << "classes=" << n << ";items_per_class=" << spec.items_per_class << ";dim=" << dim
             << ";separation=" << spec.separation << ";seed=" << seed;
        manifest.item_source.path = echo.str();
    }

    EmbeddingTable table;
    table.dim = static_cast<std::uint32_t>(dim);
    for (int c = 0; c < n; ++c) {
        ClassEntry cls;
        cls.id = "c" + pad_index(c, cls_width);
        cls.display_name = "cluster " + std::to_string(c);
        TaskRng rng(seed, static_cast<std::uint64_t>(c), RngPurpose::kSynthesis);
        for (int i = 0; i < spec.items_per_class; ++i) {
            std::string item_id = cls.id + "_i" + pad_index(i, item_width);
            std::vector<float> point(dim);
            for (int d = 0; d < dim; ++d)
                point[d] = static_cast<float>(means[c][d] + rng.normal());
            cls.items.push_back(ItemRef{item_id, ""});
            table.rows.emplace_back(std::move(item_id), std::move(point));
        }
        manifest.classes.push_back(std::move(cls));
    }

    return registry.register_dataset(std::move(manifest), std::move(table));
}

// --- embedding file IO ---

namespace {

using detail::ByteReader;
using detail::put_f32;
using detail::put_u16;
using detail::put_u32;
using detail::put_u64;
using detail::read_file_bytes;
using detail::write_file_bytes;

constexpr char kEmbeddingMagic[] = "FTEB1";

}  // namespace

EmbeddingTable load_embeddings(const std::string& path, std::uint32_t expect_dim) {
    const std::string bytes = read_file_bytes(path);
    const std::string what = "embedding file '" + path + "'";
    if (bytes.size() < 5 || bytes.compare(0, 5, kEmbeddingMagic) != 0)
        throw Error(what + ": bad magic");
    ByteReader r(bytes, what, 5);
    EmbeddingTable table;
    table.dim = r.u32();
    if (table.dim == 0) throw Error(what + ": dim mismatch (zero dimension)");
    if (expect_dim != 0 && table.dim != expect_dim)
        throw Error(what + ": dim mismatch (expected " + std::to_string(expect_dim) + ", got " +
                    std::to_string(table.dim) + ")");
    const std::uint64_t count = r.u64();
    table.rows.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint16_t id_len = r.u16();
        std::string id = r.str(id_len);
        std::vector<float> row(table.dim);
        for (std::uint32_t d = 0; d < table.dim; ++d) {
            row[d] = r.f32();
            if (!std::isfinite(row[d]))
                throw Error(what + ": non-finite entry in row '" + id + "'");
        }
        table.rows.emplace_back(std::move(id), std::move(row));
    }
    if (!r.at_end()) throw Error(what + ": trailing bytes after payload");
    table.rebuild_index();
    return table;
}

void write_embeddings(const std::string& path, const EmbeddingTable& table) {
    std::string out(kEmbeddingMagic, 5);
    put_u32(out, table.dim);
    put_u64(out, table.rows.size());
    for (const auto& [id, row] : table.rows) {
        if (row.size() != table.dim)
            throw Error("embedding row '" + id + "' has wrong dimension");
        if (id.size() > 0xffff) throw Error("item id too long: '" + id + "'");
        put_u16(out, static_cast<std::uint16_t>(id.size()));
        out += id;
        for (float f : row) put_f32(out, f);
    }
    write_file_bytes(path, out);
}

// --- manifest text format ---

namespace {

constexpr char kManifestHeader[] = "fewtrans-manifest v1";

std::string source_kind_name(ItemSourceKind k) {
    switch (k) {
        case ItemSourceKind::EmbeddingFile: return "embedding-file";
        case ItemSourceKind::ImageFolder: return "image-folder";
        case ItemSourceKind::Synthetic: return "synthetic";
    }
    return "embedding-file";
}

ItemSourceKind parse_source_kind(const std::string& s, const std::string& what) {
    if (s == "embedding-file") return ItemSourceKind::EmbeddingFile;
    if (s == "image-folder") return ItemSourceKind::ImageFolder;
    if (s == "synthetic") return ItemSourceKind::Synthetic;
    throw Error(what + ": unknown item source '" + s + "'");
}

}  // namespace

void write_manifest(const std::string& path, const DatasetManifest& m, const ClassSplit* split) {
    std::ostringstream out;
    out << kManifestHeader << "\n";
    out << "name " << m.name << "\n";
    out << "source " << source_kind_name(m.item_source.kind);
    if (!m.item_source.path.empty()) out << " " << m.item_source.path;
    out << "\n";
    if (!m.notes.empty()) {
        std::istringstream notes(m.notes);
        std::string line;
        while (std::getline(notes, line)) out << "note " << line << "\n";
    }
    for (const auto& cls : m.classes) out << "class " << cls.id << " " << cls.display_name << "\n";
    for (const auto& cls : m.classes)
        for (const auto& item : cls.items) {
            out << "item " << cls.id << " " << item.id;
            if (!item.group.empty()) out << " group=" << item.group;
            out << "\n";
        }
    for (const auto& e : m.hierarchy) out << "edge " << e.parent << " " << e.child << "\n";
    if (split) {
        for (const auto& id : split->base) out << "base " << id << "\n";
        for (const auto& id : split->novel) out << "novel " << id << "\n";
    }
    write_file_bytes(path, out.str());
}

namespace {

struct ParsedManifest {
    DatasetManifest manifest;
    ClassSplit split;
    bool has_split = false;
};

ParsedManifest parse_manifest_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest '" + path + "'");
    const std::string what = "manifest '" + path + "'";

    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw Error(what + ": missing header line '" + std::string(kManifestHeader) + "'");

    ParsedManifest out;
    DatasetManifest& m = out.manifest;
    std::unordered_map<std::string, std::size_t> class_pos;
    std::vector<std::string> notes;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string kw;
        ls >> kw;
        auto fail = [&](const std::string& msg) {
            throw Error(what + ": line " + std::to_string(line_no) + ": " + msg);
        };
        if (kw == "name") {
            ls >> m.name;
            if (m.name.empty()) fail("missing dataset name");
        } else if (kw == "source") {
            std::string kind;
            ls >> kind;
            m.item_source.kind = parse_source_kind(kind, what);
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
            m.item_source.path = rest;
        } else if (kw == "note") {
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
            notes.push_back(rest);
        } else if (kw == "class") {
            ClassEntry cls;
            ls >> cls.id;
            std::string rest;
            std::getline(ls, rest);
            if (!rest.empty() && rest[0] == ' ') rest.erase(0, 1);
            cls.display_name = rest;
            if (cls.id.empty()) fail("class line without id");
            class_pos[cls.id] = m.classes.size();
            m.classes.push_back(std::move(cls));
        } else if (kw == "item") {
            std::string cls_id, item_id, extra;
            ls >> cls_id >> item_id;
            if (cls_id.empty() || item_id.empty()) fail("item line needs class and item id");
            auto it = class_pos.find(cls_id);
            if (it == class_pos.end()) fail("item references unknown class '" + cls_id + "'");
            ItemRef item{item_id, ""};
            while (ls >> extra) {
                if (extra.rfind("group=", 0) == 0) item.group = extra.substr(6);
                else fail("unknown item attribute '" + extra + "'");
            }
            m.classes[it->second].items.push_back(std::move(item));
        } else if (kw == "edge") {
            HierarchyEdge e;
            ls >> e.parent >> e.child;
            if (e.parent.empty() || e.child.empty()) fail("edge line needs parent and child");
            m.hierarchy.push_back(std::move(e));
        } else if (kw == "base" || kw == "novel") {
            std::string id;
            ls >> id;
            if (id.empty()) fail("split line without class id");
            if (!class_pos.count(id)) fail("split references unknown class '" + id + "'");
            out.has_split = true;
            (kw == "base" ? out.split.base : out.split.novel).push_back(id);
        } else {
            fail("unknown keyword '" + kw + "'");
        }
    }
    if (m.name.empty()) throw Error(what + ": no name line");
    std::string joined;
    for (std::size_t i = 0; i < notes.size(); ++i) {
        if (i) joined += "\n";
        joined += notes[i];
    }
    m.notes = joined;
    return out;
}

}  // namespace

DatasetManifest read_manifest(const std::string& path) {
    return parse_manifest_file(path).manifest;
}

std::optional<ClassSplit> read_manifest_split(const std::string& path) {
    ParsedManifest p = parse_manifest_file(path);
    if (!p.has_split) return std::nullopt;
    return p.split;
}

}  // namespace fewtrans
