#pragma once

#include <string>
#include <vector>

#include "fewtrans/dataset.hpp"

namespace fewtrans {

/// A dataset shipped as metadata only: the class roster, the base/novel
/// split and (where it applies) a class hierarchy. Items are bound later
/// from a user embedding file or image folder.
struct BundledDataset {
    DatasetManifest manifest;
    ClassSplit split;
};

/// All ten bundled benchmark datasets.
std::vector<BundledDataset> bundled_datasets();

/// One bundled dataset by name; throws on unknown name.
BundledDataset bundled_dataset(const std::string& name);

std::vector<std::string> bundled_dataset_names();

}  // namespace fewtrans
