#pragma once

// Minimal PLY support: a single "vertex" element with scalar properties,
// ASCII or binary little-endian on input, binary little-endian float32 on output.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace bsplat {

struct PlyTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;  // one per property, all of length rows()

  std::size_t rows() const { return columns.empty() ? 0 : columns.front().size(); }
  std::optional<std::size_t> find(const std::string& name) const;
  /// Column by name; throws IoError(kSchema) naming the property when absent.
  const std::vector<double>& column(const std::string& name) const;
};

/// Throws IoError: kMissingFile, kMalformed (bad header, unsupported format or
/// type, truncated payload).
PlyTable read_ply(const std::filesystem::path& path);

/// Writes every column as float32, binary little-endian. `uchar_columns` lists
/// properties written as uchar instead (values rounded and clamped to [0, 255]).
void write_ply(const std::filesystem::path& path, const PlyTable& table,
               const std::vector<std::string>& uchar_columns = {});

}  // namespace bsplat
