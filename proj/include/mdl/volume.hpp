#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdl {

/// Voxel counts along (depth, height, width). Width is the fastest axis.
struct Extents {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t voxels() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool operator==(const Extents&) const = default;
  std::string str() const;
};

/// Physical voxel edge lengths in mm along (depth, height, width).
struct Spacing {
  double d = 1.0, h = 1.0, w = 1.0;

  double voxel_volume() const { return d * h * w; }
  bool operator==(const Spacing&) const = default;
};

/// NIfTI orientation fields, carried through I/O untouched.
struct Orientation {
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float qfac = 1.0f;
  std::array<float, 3> quatern{0.0f, 0.0f, 0.0f};
  std::array<float, 3> qoffset{0.0f, 0.0f, 0.0f};
  std::array<std::array<float, 4>, 3> srow{};

  bool operator==(const Orientation&) const = default;
};

enum Label : std::uint8_t { kBackground = 0, kIpsilateral = 1, kContralateral = 2 };
inline constexpr std::size_t kNumClasses = 3;

struct VolumeGrid {
  Extents extents;
  Spacing spacing;
  std::vector<double> values;
  Orientation orientation;

  static VolumeGrid filled(Extents e, Spacing s, double value = 0.0);
  double at(std::size_t z, std::size_t y, std::size_t x) const { return values[extents.index(z, y, x)]; }
  /// Throws if the value count or spacing is inconsistent.
  void validate() const;
};

struct LabelVolume {
  Extents extents;
  Spacing spacing;
  std::vector<std::uint8_t> labels;
  Orientation orientation;

  static LabelVolume filled(Extents e, Spacing s, std::uint8_t label = kBackground);
  std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const { return labels[extents.index(z, y, x)]; }
  std::size_t count(std::uint8_t label) const;
  /// Throws if any label is outside {0,1,2} or sizes are inconsistent.
  void validate() const;
};

struct BinaryMask {
  Extents extents;
  Spacing spacing;
  std::vector<std::uint8_t> bits;  // 0 or 1

  static BinaryMask empty(Extents e, Spacing s);
  bool at(std::size_t z, std::size_t y, std::size_t x) const { return bits[extents.index(z, y, x)] != 0; }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Brain = classes {1, 2}.
BinaryMask brain_mask(const LabelVolume& labels);
/// Voxels carrying exactly `label`.
BinaryMask class_mask(const LabelVolume& labels, std::uint8_t label);

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);
bool mask_subset(const BinaryMask& inner, const BinaryMask& outer);

/// Raised for malformed or inconsistent input data (bad files, invalid labels).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mdl
