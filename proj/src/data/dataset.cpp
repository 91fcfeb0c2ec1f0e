#include "mdl/dataset.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mdl/csv.hpp"
#include "mdl/volume.hpp"

namespace mdl {

DatasetSplit split_dataset(const std::vector<DatasetItem>& items, std::size_t train_per_group,
                           std::size_t val_per_group, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].group].push_back(i);

  enum class Role { train, val, test };
  std::vector<Role> role(items.size(), Role::test);
  std::uint64_t group_index = 0;
  for (auto& [name, members] : groups) {
    if (members.size() < train_per_group + val_per_group) {
      throw std::invalid_argument("group '" + name + "' has " + std::to_string(members.size()) +
                                  " items, needs at least " + std::to_string(train_per_group + val_per_group));
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(group_index++)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order = members;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      role[order[k]] = k < train_per_group ? Role::train : (k < train_per_group + val_per_group ? Role::val : Role::test);
    }
  }
  DatasetSplit split;
  for (std::size_t i = 0; i < items.size(); ++i) {
    switch (role[i]) {
      case Role::train: split.train.push_back(items[i]); break;
      case Role::val: split.val.push_back(items[i]); break;
      case Role::test: split.test.push_back(items[i]); break;
    }
  }
  return split;
}

std::vector<DatasetItem> read_manifest(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  std::size_t ci, cg, cv, cl;
  try {
    ci = t.column("id");
    cg = t.column("group");
    cv = t.column("volume_path");
    cl = t.column("labels_path");
  } catch (const std::out_of_range& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  std::vector<DatasetItem> items;
  for (const auto& r : t.rows) items.push_back({r[ci], r[cg], r[cv], r[cl]});
  return items;
}

void write_manifest(const std::vector<DatasetItem>& items, const std::filesystem::path& path) {
  csv::Table t;
  t.header = {"id", "group", "volume_path", "labels_path"};
  for (const auto& it : items) {
    t.rows.push_back({it.id, it.group, it.volume_path.string(), it.labels_path.string()});
  }
  csv::write(t, path);
}

DatasetItem resolve(const DatasetItem& item, const std::filesystem::path& base) {
  DatasetItem out = item;
  if (!out.volume_path.empty() && out.volume_path.is_relative()) out.volume_path = base / out.volume_path;
  if (!out.labels_path.empty() && out.labels_path.is_relative()) out.labels_path = base / out.labels_path;
  return out;
}

}  // namespace mdl
