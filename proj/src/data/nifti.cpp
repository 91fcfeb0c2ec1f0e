#include "mdl/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mdl {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDataOffset = 352;
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtFloat32 = 16;

// Byte offsets of the NIfTI-1 header fields used here.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t descrip = 148;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t qoffset_x = 268;
constexpr std::size_t srow_x = 280;
constexpr std::size_t magic = 344;
}  // namespace off

template <typename T>
void put(std::vector<char>& buf, std::size_t at, T value) {
  std::memcpy(buf.data() + at, &value, sizeof(T));
}

template <typename T>
T get(const std::vector<char>& buf, std::size_t at) {
  T value;
  std::memcpy(&value, buf.data() + at, sizeof(T));
  return value;
}

struct Header {
  Extents extents;
  Spacing spacing;
  Orientation orientation;
  std::int16_t datatype = 0;
  std::size_t data_offset = kDataOffset;
  float slope = 0.0f;
  float inter = 0.0f;
};

std::vector<char> encode_header(const Extents& e, const Spacing& s, const Orientation& o, std::int16_t datatype) {
  if (e.d > 32767 || e.h > 32767 || e.w > 32767) throw DataError("extents " + e.str() + " exceed the NIfTI-1 limit");
  std::vector<char> buf(kDataOffset, 0);
  put<std::int32_t>(buf, off::sizeof_hdr, static_cast<std::int32_t>(kHeaderSize));
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(e.w), static_cast<std::int16_t>(e.h),
                                static_cast<std::int16_t>(e.d), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(buf, off::dim + 2 * i, dims[i]);
  put<std::int16_t>(buf, off::datatype, datatype);
  put<std::int16_t>(buf, off::bitpix, datatype == kDtFloat32 ? 32 : 8);
  const float pix[8] = {o.qfac, static_cast<float>(s.w), static_cast<float>(s.h), static_cast<float>(s.d), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<float>(buf, off::pixdim + 4 * i, pix[i]);
  put<float>(buf, off::vox_offset, static_cast<float>(kDataOffset));
  put<float>(buf, off::scl_slope, 1.0f);
  put<float>(buf, off::scl_inter, 0.0f);
  buf[off::xyzt_units] = 2;  // mm
  const char descrip[] = "mdl";
  std::memcpy(buf.data() + off::descrip, descrip, sizeof(descrip));
  put<std::int16_t>(buf, off::qform_code, o.qform_code);
  put<std::int16_t>(buf, off::sform_code, o.sform_code);
  for (int i = 0; i < 3; ++i) put<float>(buf, off::quatern_b + 4 * i, o.quatern[i]);
  for (int i = 0; i < 3; ++i) put<float>(buf, off::qoffset_x + 4 * i, o.qoffset[i]);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) put<float>(buf, off::srow_x + 16 * r + 4 * c, o.srow[r][c]);
  std::memcpy(buf.data() + off::magic, "n+1\0", 4);
  return buf;
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Header decode_header(const std::vector<char>& buf, const std::filesystem::path& path) {
  const std::string where = path.string() + ": ";
  if (buf.size() < kHeaderSize) throw DataError(where + "truncated header (" + std::to_string(buf.size()) + " bytes)");
  const auto sizeof_hdr = get<std::int32_t>(buf, off::sizeof_hdr);
  if (sizeof_hdr != static_cast<std::int32_t>(kHeaderSize)) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) == kHeaderSize) {
      throw DataError(where + "big-endian NIfTI files are not supported");
    }
    throw DataError(where + "bad sizeof_hdr " + std::to_string(sizeof_hdr) + ", not a NIfTI-1 file");
  }
  if (std::memcmp(buf.data() + off::magic, "n+1\0", 4) != 0) {
    throw DataError(where + "bad magic; only single-file NIfTI-1 (n+1) is supported");
  }
  std::int16_t dims[8];
  for (int i = 0; i < 8; ++i) dims[i] = get<std::int16_t>(buf, off::dim + 2 * i);
  if (dims[0] < 3 || dims[0] > 7) throw DataError(where + "unsupported dimensionality " + std::to_string(dims[0]));
  for (int i = 4; i <= dims[0]; ++i) {
    if (dims[i] != 1) throw DataError(where + "only 3D volumes are supported (dim[" + std::to_string(i) + "] = " +
                                      std::to_string(dims[i]) + ")");
  }
  for (int i = 1; i <= 3; ++i) {
    if (dims[i] <= 0) throw DataError(where + "non-positive extent in dim[" + std::to_string(i) + "]");
  }
  Header h;
  h.extents = {static_cast<std::size_t>(dims[3]), static_cast<std::size_t>(dims[2]), static_cast<std::size_t>(dims[1])};
  h.datatype = get<std::int16_t>(buf, off::datatype);
  const auto bitpix = get<std::int16_t>(buf, off::bitpix);
  if (h.datatype == kDtFloat32) {
    if (bitpix != 32) throw DataError(where + "float32 datatype with bitpix " + std::to_string(bitpix));
  } else if (h.datatype == kDtUint8) {
    if (bitpix != 8) throw DataError(where + "uint8 datatype with bitpix " + std::to_string(bitpix));
  } else {
    throw DataError(where + "unsupported datatype " + std::to_string(h.datatype) + " (expected float32 or uint8)");
  }
  float pix[8];
  for (int i = 0; i < 8; ++i) pix[i] = get<float>(buf, off::pixdim + 4 * i);
  h.spacing = {pix[3], pix[2], pix[1]};
  if (!(h.spacing.d > 0 && h.spacing.h > 0 && h.spacing.w > 0)) {
    throw DataError(where + "voxel spacing must be positive");
  }
  h.orientation.qfac = pix[0];
  h.orientation.qform_code = get<std::int16_t>(buf, off::qform_code);
  h.orientation.sform_code = get<std::int16_t>(buf, off::sform_code);
  for (int i = 0; i < 3; ++i) h.orientation.quatern[i] = get<float>(buf, off::quatern_b + 4 * i);
  for (int i = 0; i < 3; ++i) h.orientation.qoffset[i] = get<float>(buf, off::qoffset_x + 4 * i);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) h.orientation.srow[r][c] = get<float>(buf, off::srow_x + 16 * r + 4 * c);
  const float vox = get<float>(buf, off::vox_offset);
  if (!(vox >= static_cast<float>(kDataOffset))) throw DataError(where + "vox_offset below 352");
  h.data_offset = static_cast<std::size_t>(vox);
  h.slope = get<float>(buf, off::scl_slope);
  h.inter = get<float>(buf, off::scl_inter);
  const std::size_t bytes = h.extents.voxels() * (h.datatype == kDtFloat32 ? 4 : 1);
  if (buf.size() < h.data_offset + bytes) {
    throw DataError(where + "truncated payload: expected " + std::to_string(bytes) + " data bytes, found " +
                    std::to_string(buf.size() > h.data_offset ? buf.size() - h.data_offset : 0));
  }
  return h;
}

void write_file(const std::filesystem::path& path, const std::vector<char>& header, const char* data,
                std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(data, static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace

void write_volume(const VolumeGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  std::vector<float> values(grid.values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isnan(grid.values[i])) throw DataError("refusing to write NaN voxel to " + path.string());
    values[i] = static_cast<float>(grid.values[i]);
  }
  write_file(path, encode_header(grid.extents, grid.spacing, grid.orientation, kDtFloat32),
             reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float));
}

VolumeGrid read_volume(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  const Header h = decode_header(buf, path);
  VolumeGrid grid;
  grid.extents = h.extents;
  grid.spacing = h.spacing;
  grid.orientation = h.orientation;
  grid.values.resize(h.extents.voxels());
  const bool scaled = h.slope != 0.0f && !(h.slope == 1.0f && h.inter == 0.0f);
  const char* data = buf.data() + h.data_offset;
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    double v;
    if (h.datatype == kDtFloat32) {
      float f;
      std::memcpy(&f, data + 4 * i, 4);
      v = f;
    } else {
      v = static_cast<unsigned char>(data[i]);
    }
    if (scaled) v = v * h.slope + h.inter;
    if (std::isnan(v)) throw DataError(path.string() + ": NaN voxel at index " + std::to_string(i));
    grid.values[i] = v;
  }
  return grid;
}

void write_labels(const LabelVolume& labels, const std::filesystem::path& path) {
  labels.validate();
  write_file(path, encode_header(labels.extents, labels.spacing, labels.orientation, kDtUint8),
             reinterpret_cast<const char*>(labels.labels.data()), labels.labels.size());
}

LabelVolume read_labels(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  const Header h = decode_header(buf, path);
  if (h.datatype != kDtUint8) throw DataError(path.string() + ": label volumes must be uint8");
  LabelVolume labels;
  labels.extents = h.extents;
  labels.spacing = h.spacing;
  labels.orientation = h.orientation;
  const auto* data = reinterpret_cast<const std::uint8_t*>(buf.data() + h.data_offset);
  labels.labels.assign(data, data + h.extents.voxels());
  try {
    labels.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return labels;
}

}  // namespace mdl
