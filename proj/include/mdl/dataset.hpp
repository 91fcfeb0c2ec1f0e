#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mdl {

/// One manifest row. Paths are stored as written; resolve() makes them
/// absolute relative to the manifest directory.
struct DatasetItem {
  std::string id;
  std::string group;
  std::filesystem::path volume_path;
  std::filesystem::path labels_path;

  bool operator==(const DatasetItem&) const = default;
};

struct DatasetSplit {
  std::vector<DatasetItem> train;
  std::vector<DatasetItem> val;
  std::vector<DatasetItem> test;
};

/// Per group: `train_per_group` items to train, `val_per_group` to validation,
/// the rest to test. Deterministic in `seed`; each split keeps input order.
/// Throws std::invalid_argument naming any group that is too small.
DatasetSplit split_dataset(const std::vector<DatasetItem>& items, std::size_t train_per_group,
                           std::size_t val_per_group, std::uint64_t seed);

/// CSV with header `id,group,volume_path,labels_path`.
std::vector<DatasetItem> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<DatasetItem>& items, const std::filesystem::path& path);
/// Makes relative paths absolute against `base`.
DatasetItem resolve(const DatasetItem& item, const std::filesystem::path& base);

}  // namespace mdl
