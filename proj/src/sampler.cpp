#include "fewtrans/sampler.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fewtrans/rng.hpp"

namespace fewtrans {

std::string split_tag_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::Base: return "base";
        case SplitTag::Novel: return "novel";
        case SplitTag::BaseToNovel: return "base-to-novel";
    }
    return "base";
}

SplitTag parse_split_tag(const std::string& name) {
    if (name == "base") return SplitTag::Base;
    if (name == "novel") return SplitTag::Novel;
    if (name == "base-to-novel") return SplitTag::BaseToNovel;
    throw Error("unknown split tag '" + name + "'");
}

void TaskStreamSpec::validate() const {
    if (way_lo < 2) throw Error("task spec: way_lo must be >= 2");
    if (way_hi < way_lo) throw Error("task spec: way_hi must be >= way_lo");
    if (shot_cap < 1) throw Error("task spec: shot_cap must be >= 1");
    if (n_tasks < 1) throw Error("task spec: n_tasks must be >= 1");
    if (query_per_class < 1) throw Error("task spec: query_per_class must be >= 1");
    if (fixed_shot < 0) throw Error("task spec: fixed_shot must be >= 0");
}

ClassSplit whole_dataset_split(const DatasetHandle& handle) {
    ClassSplit split;
    for (std::size_t i = 0; i < handle->n_classes(); ++i)
        split.base.push_back(handle->class_at(i).id);
    return split;
}

namespace {

// A class is usable if it can yield one support and one query item under the
// group constraint, i.e. it spans at least two distinct group units.
std::size_t group_units(const ClassEntry& cls) {
    std::unordered_set<std::string> groups;
    std::size_t ungrouped = 0;
    for (const auto& item : cls.items) {
        if (item.group.empty()) ++ungrouped;
        else groups.insert(item.group);
    }
    return ungrouped + groups.size();
}

std::vector<int> eligible_pool(const DatasetHandle& handle, const std::vector<std::string>& ids) {
    std::vector<int> pool;
    for (const auto& id : ids) {
        int idx = handle->class_index(id);
        if (idx < 0) throw Error("split references unknown class '" + id + "'");
        if (group_units(handle->class_at(static_cast<std::size_t>(idx))) >= 2)
            pool.push_back(idx);
    }
    return pool;
}

// Shuffled, group-deduplicated candidate items of one class. Groups already
// consumed elsewhere in the task are skipped.
std::vector<const ItemRef*> class_candidates(const ClassEntry& cls, TaskRng& rng,
                                             std::unordered_set<std::string>& used_groups) {
    std::vector<std::size_t> order(cls.items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<const ItemRef*> out;
    std::unordered_set<std::string> local_groups;
    for (std::size_t i : order) {
        const ItemRef& item = cls.items[i];
        if (!item.group.empty()) {
            if (used_groups.count(item.group) || !local_groups.insert(item.group).second)
                continue;
        }
        out.push_back(&item);
    }
    return out;
}

void commit_groups(const std::vector<const ItemRef*>& taken,
                   std::unordered_set<std::string>& used_groups) {
    for (const ItemRef* item : taken)
        if (!item->group.empty()) used_groups.insert(item->group);
}

int draw_ways(TaskRng& rng, int lo, int hi_clamped) {
    return lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi_clamped - lo + 1)));
}

Task sample_from_pool(const DatasetHandle& handle, std::vector<int> pool,
                      const TaskStreamSpec& spec, std::int64_t task_index, SplitTag tag) {
    const auto uidx = static_cast<std::uint64_t>(task_index);
    if (static_cast<int>(pool.size()) < spec.way_lo)
        throw Error("split too small: " + std::to_string(pool.size()) +
                    " eligible classes, need " + std::to_string(spec.way_lo));

    TaskRng way_rng(spec.run_seed, uidx, RngPurpose::kWays);
    const int ways = draw_ways(way_rng, spec.way_lo,
                               std::min(spec.way_hi, static_cast<int>(pool.size())));

    TaskRng class_rng(spec.run_seed, uidx, RngPurpose::kClasses);
    class_rng.shuffle(pool);
    pool.resize(static_cast<std::size_t>(ways));

    Task task;
    task.task_index = task_index;
    task.dataset = handle->name();
    task.split_tag = tag;
    task.run_seed = spec.run_seed;

    std::unordered_set<std::string> used_groups;
    for (int pos = 0; pos < ways; ++pos) {
        const ClassEntry& cls = handle->class_at(static_cast<std::size_t>(pool[pos]));
        task.class_ids.push_back(cls.id);

        TaskRng item_rng(spec.run_seed, uidx, RngPurpose::kItems, static_cast<std::uint64_t>(pos));
        auto candidates = class_candidates(cls, item_rng, used_groups);
        const int avail = static_cast<int>(candidates.size());
        if (avail < 2)
            throw Error("class '" + cls.id + "' lacks 2 eligible items for task " +
                        std::to_string(task_index));

        int shots;
        if (spec.fixed_shot > 0) {
            shots = std::min(spec.fixed_shot, avail - 1);
        } else {
            const int cap = std::min(spec.shot_cap, avail - 1);
            TaskRng shot_rng(spec.run_seed, uidx, RngPurpose::kShots,
                             static_cast<std::uint64_t>(pos));
            shots = 1 + static_cast<int>(shot_rng.uniform_int(static_cast<std::uint64_t>(cap)));
        }
        const int queries = std::min(spec.query_per_class, avail - shots);

        std::vector<const ItemRef*> taken(candidates.begin(),
                                          candidates.begin() + shots + queries);
        commit_groups(taken, used_groups);
        for (int i = 0; i < shots; ++i)
            task.support.push_back({candidates[static_cast<std::size_t>(i)]->id, pos});
        for (int i = 0; i < queries; ++i)
            task.query.push_back({candidates[static_cast<std::size_t>(shots + i)]->id, pos});
    }
    return task;
}

// Adapt-on-base, test-on-novel episode: the class roster concatenates a base
// half (support only) and a novel half (query only).
Task sample_base_to_novel(const DatasetHandle& handle, const ClassSplit& split,
                          const TaskStreamSpec& spec, std::int64_t task_index) {
    const auto uidx = static_cast<std::uint64_t>(task_index);
    std::vector<int> base_pool = eligible_pool(handle, split.base);
    std::vector<int> novel_pool = eligible_pool(handle, split.novel);

    auto feasible = [&](int n) {
        const int n_base = (n + 1) / 2, n_novel = n / 2;
        return n_novel >= 1 && n_base <= static_cast<int>(base_pool.size()) &&
               n_novel <= static_cast<int>(novel_pool.size());
    };
    int hi = std::min(spec.way_hi,
                      static_cast<int>(base_pool.size() + novel_pool.size()));
    while (hi >= spec.way_lo && !feasible(hi)) --hi;
    if (hi < spec.way_lo) throw Error("split too small for base-to-novel sampling");

    TaskRng way_rng(spec.run_seed, uidx, RngPurpose::kWays);
    const int ways = draw_ways(way_rng, spec.way_lo, hi);
    const int n_base = (ways + 1) / 2;

    TaskRng class_rng(spec.run_seed, uidx, RngPurpose::kClasses);
    class_rng.shuffle(base_pool);
    class_rng.shuffle(novel_pool);

    Task task;
    task.task_index = task_index;
    task.dataset = handle->name();
    task.split_tag = SplitTag::BaseToNovel;
    task.run_seed = spec.run_seed;

    std::unordered_set<std::string> used_groups;
    for (int pos = 0; pos < ways; ++pos) {
        const bool is_base = pos < n_base;
        const int cls_idx = is_base ? base_pool[static_cast<std::size_t>(pos)]
                                    : novel_pool[static_cast<std::size_t>(pos - n_base)];
        const ClassEntry& cls = handle->class_at(static_cast<std::size_t>(cls_idx));
        task.class_ids.push_back(cls.id);

        TaskRng item_rng(spec.run_seed, uidx, RngPurpose::kItems, static_cast<std::uint64_t>(pos));
        auto candidates = class_candidates(cls, item_rng, used_groups);
        const int avail = static_cast<int>(candidates.size());
        if (avail < 1)
            throw Error("class '" + cls.id + "' has no eligible items for task " +
                        std::to_string(task_index));

        int count;
        if (is_base) {
            if (spec.fixed_shot > 0) {
                count = std::min(spec.fixed_shot, avail);
            } else {
                const int cap = std::min(spec.shot_cap, avail);
                TaskRng shot_rng(spec.run_seed, uidx, RngPurpose::kShots,
                                 static_cast<std::uint64_t>(pos));
                count = 1 + static_cast<int>(
                                shot_rng.uniform_int(static_cast<std::uint64_t>(cap)));
                count = std::min(count, avail);
            }
        } else {
            count = std::min(spec.query_per_class, avail);
        }
        std::vector<const ItemRef*> taken(candidates.begin(), candidates.begin() + count);
        commit_groups(taken, used_groups);
        for (int i = 0; i < count; ++i)
            (is_base ? task.support : task.query)
                .push_back({candidates[static_cast<std::size_t>(i)]->id, pos});
    }
    return task;
}

}  // namespace

Task sample_task(const DatasetHandle& handle, const ClassSplit& split, const TaskStreamSpec& spec,
                 std::int64_t task_index) {
    spec.validate();
    if (task_index < 0) throw Error("task_index must be >= 0");
    switch (spec.split_tag) {
        case SplitTag::Base:
            return sample_from_pool(handle, eligible_pool(handle, split.base), spec, task_index,
                                    SplitTag::Base);
        case SplitTag::Novel:
            return sample_from_pool(handle, eligible_pool(handle, split.novel), spec, task_index,
                                    SplitTag::Novel);
        case SplitTag::BaseToNovel:
            return sample_base_to_novel(handle, split, spec, task_index);
    }
    throw Error("unreachable split tag");
}

Task sample_task_hierarchical(const DatasetHandle& handle, const ClassSplit& split,
                              const TaskStreamSpec& spec, std::int64_t task_index) {
    spec.validate();
    if (task_index < 0) throw Error("task_index must be >= 0");
    if (spec.split_tag == SplitTag::BaseToNovel)
        throw Error("hierarchical sampling supports base or novel tags only");
    const auto& hierarchy = handle->manifest().hierarchy;
    if (hierarchy.empty()) throw Error("dataset '" + handle->name() + "' has no hierarchy");

    const std::vector<std::string>& ids =
        spec.split_tag == SplitTag::Base ? split.base : split.novel;
    std::unordered_set<int> pool_set;
    for (int idx : eligible_pool(handle, ids)) pool_set.insert(idx);

    // leaf descendants per internal node, restricted to the eligible pool
    std::unordered_map<std::string, std::vector<std::string>> children;
    for (const auto& e : hierarchy) children[e.parent].push_back(e.child);

    std::vector<std::string> nodes;
    for (const auto& [node, kids] : children) {
        (void)kids;
        nodes.push_back(node);
    }
    std::sort(nodes.begin(), nodes.end());  // stable order for determinism

    auto leaves_of = [&](const std::string& node) {
        std::vector<int> leaves;
        std::vector<std::string> stack{node};
        while (!stack.empty()) {
            std::string cur = stack.back();
            stack.pop_back();
            auto it = children.find(cur);
            if (it == children.end()) {
                int idx = handle->class_index(cur);
                if (idx >= 0 && pool_set.count(idx)) leaves.push_back(idx);
            } else {
                for (const auto& kid : it->second) stack.push_back(kid);
            }
        }
        std::sort(leaves.begin(), leaves.end());
        return leaves;
    };

    std::vector<std::pair<std::string, std::vector<int>>> eligible_nodes;
    for (const auto& node : nodes) {
        auto leaves = leaves_of(node);
        if (static_cast<int>(leaves.size()) >= spec.way_lo)
            eligible_nodes.emplace_back(node, std::move(leaves));
    }
    if (eligible_nodes.empty())
        throw Error("no hierarchy node has enough eligible leaf classes");

    TaskRng node_rng(spec.run_seed, static_cast<std::uint64_t>(task_index), RngPurpose::kNode);
    const std::size_t pick =
        static_cast<std::size_t>(node_rng.uniform_int(eligible_nodes.size()));
    return sample_from_pool(handle, eligible_nodes[pick].second, spec, task_index,
                            spec.split_tag);
}

std::vector<Task> task_stream(const DatasetHandle& handle, const ClassSplit& split,
                              const TaskStreamSpec& spec, bool hierarchical) {
    spec.validate();
    std::vector<Task> tasks;
    tasks.reserve(static_cast<std::size_t>(spec.n_tasks));
    for (int i = 0; i < spec.n_tasks; ++i) {
        try {
            tasks.push_back(hierarchical ? sample_task_hierarchical(handle, split, spec, i)
                                         : sample_task(handle, split, spec, i));
        } catch (const Error& e) {
            throw Error("task " + std::to_string(i) + ": " + e.what());
        }
    }
    return tasks;
}

namespace {

std::string items_field(const std::vector<TaskItem>& items) {
    if (items.empty()) return "-";
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ",";
        out += items[i].item_id + ":" + std::to_string(items[i].label);
    }
    return out;
}

std::vector<TaskItem> parse_items_field(const std::string& field, const std::string& what) {
    std::vector<TaskItem> items;
    if (field == "-") return items;
    std::istringstream ss(field);
    std::string part;
    while (std::getline(ss, part, ',')) {
        auto colon = part.rfind(':');
        if (colon == std::string::npos || colon == 0)
            throw Error(what + ": malformed item '" + part + "'");
        items.push_back({part.substr(0, colon), std::stoi(part.substr(colon + 1))});
    }
    return items;
}

}  // namespace

std::string serialize_task(const Task& task) {
    std::ostringstream out;
    out << "task " << task.task_index << " seed " << task.run_seed << " dataset " << task.dataset
        << " split " << split_tag_name(task.split_tag) << " classes ";
    for (std::size_t i = 0; i < task.class_ids.size(); ++i) {
        if (i) out << ",";
        out << task.class_ids[i];
    }
    out << " support " << items_field(task.support) << " query " << items_field(task.query);
    return out.str();
}

Task parse_task(const std::string& line) {
    std::istringstream ss(line);
    std::string kw, classes_field, support_field, query_field, split_name;
    Task task;
    auto expect = [&](const char* want) {
        if (!(ss >> kw) || kw != want)
            throw Error("task line: expected keyword '" + std::string(want) + "'");
    };
    expect("task");
    ss >> task.task_index;
    expect("seed");
    ss >> task.run_seed;
    expect("dataset");
    ss >> task.dataset;
    expect("split");
    ss >> split_name;
    task.split_tag = parse_split_tag(split_name);
    expect("classes");
    ss >> classes_field;
    expect("support");
    ss >> support_field;
    expect("query");
    ss >> query_field;
    if (!ss) throw Error("task line: truncated record");

    std::istringstream cs(classes_field);
    std::string cls;
    while (std::getline(cs, cls, ',')) task.class_ids.push_back(cls);
    task.support = parse_items_field(support_field, "task line");
    task.query = parse_items_field(query_field, "task line");
    return task;
}

}  // namespace fewtrans
