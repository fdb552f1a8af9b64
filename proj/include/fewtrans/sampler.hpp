#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewtrans/dataset.hpp"

namespace fewtrans {

enum class SplitTag { Base, Novel, BaseToNovel };

std::string split_tag_name(SplitTag tag);
SplitTag parse_split_tag(const std::string& name);

struct TaskItem {
    std::string item_id;
    int label = 0;
};

/// One few-shot episode. Labels are the contiguous range 0..n_cls-1 in
/// class_ids order; support and query item sets are disjoint.
struct Task {
    std::int64_t task_index = 0;
    std::string dataset;
    SplitTag split_tag = SplitTag::Base;
    std::vector<std::string> class_ids;
    std::vector<TaskItem> support;
    std::vector<TaskItem> query;
    std::uint64_t run_seed = 0;

    std::size_t n_cls() const { return class_ids.size(); }
};

struct TaskStreamSpec {
    SplitTag split_tag = SplitTag::Base;
    int n_tasks = 600;
    std::uint64_t run_seed = 0;
    int way_lo = 2;
    int way_hi = 15;
    int shot_cap = 10;
    int query_per_class = 15;
    /// 0 keeps the default imbalanced law (per-class shots uniform on
    /// {1..cap}); a positive value forces class-balanced fixed shots.
    int fixed_shot = 0;

    void validate() const;
};

/// All classes on the base side; for datasets used without a real split.
ClassSplit whole_dataset_split(const DatasetHandle& handle);

/// Deterministic episode sampler. Identical (run_seed, task_index) gives a
/// bit-identical task; distinct indices use unrelated random streams.
Task sample_task(const DatasetHandle& handle, const ClassSplit& split, const TaskStreamSpec& spec,
                 std::int64_t task_index);

/// Classes are drawn from the leaf descendants of one uniformly chosen
/// internal node of the manifest hierarchy.
Task sample_task_hierarchical(const DatasetHandle& handle, const ClassSplit& split,
                              const TaskStreamSpec& spec, std::int64_t task_index);

/// Materializes indices 0..n_tasks-1. Forward, reverse or parallel
/// materialization all agree because sampling is counter-keyed.
std::vector<Task> task_stream(const DatasetHandle& handle, const ClassSplit& split,
                              const TaskStreamSpec& spec, bool hierarchical = false);

/// Canonical one-line text form; parse(serialize(t)) round-trips exactly.
std::string serialize_task(const Task& task);
Task parse_task(const std::string& line);

}  // namespace fewtrans
