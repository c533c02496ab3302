#include "bsplat/ply.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bsplat/errors.hpp"

namespace bsplat {

namespace {

enum class PlyType { kInt8, kUInt8, kInt16, kUInt16, kInt32, kUInt32, kFloat32, kFloat64 };

std::optional<PlyType> parse_type(const std::string& t) {
  if (t == "char" || t == "int8") return PlyType::kInt8;
  if (t == "uchar" || t == "uint8") return PlyType::kUInt8;
  if (t == "short" || t == "int16") return PlyType::kInt16;
  if (t == "ushort" || t == "uint16") return PlyType::kUInt16;
  if (t == "int" || t == "int32") return PlyType::kInt32;
  if (t == "uint" || t == "uint32") return PlyType::kUInt32;
  if (t == "float" || t == "float32") return PlyType::kFloat32;
  if (t == "double" || t == "float64") return PlyType::kFloat64;
  return std::nullopt;
}

std::size_t type_size(PlyType t) {
  switch (t) {
    case PlyType::kInt8:
    case PlyType::kUInt8: return 1;
    case PlyType::kInt16:
    case PlyType::kUInt16: return 2;
    case PlyType::kInt32:
    case PlyType::kUInt32:
    case PlyType::kFloat32: return 4;
    case PlyType::kFloat64: return 8;
  }
  return 0;
}

template <typename T>
T load_le(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  return v;
}

double decode(PlyType t, const unsigned char* p) {
  switch (t) {
    case PlyType::kInt8: return double(load_le<std::int8_t>(p));
    case PlyType::kUInt8: return double(load_le<std::uint8_t>(p));
    case PlyType::kInt16: return double(load_le<std::int16_t>(p));
    case PlyType::kUInt16: return double(load_le<std::uint16_t>(p));
    case PlyType::kInt32: return double(load_le<std::int32_t>(p));
    case PlyType::kUInt32: return double(load_le<std::uint32_t>(p));
    case PlyType::kFloat32: return double(load_le<float>(p));
    case PlyType::kFloat64: return load_le<double>(p);
  }
  return 0.0;
}

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  throw IoError(IoError::Kind::kMalformed, "malformed PLY " + path.string() + ": " + why);
}

}  // namespace

std::optional<std::size_t> PlyTable::find(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return std::size_t(it - names.begin());
}

const std::vector<double>& PlyTable::column(const std::string& name) const {
  const auto i = find(name);
  if (!i) throw IoError(IoError::Kind::kSchema, "PLY is missing required property '" + name + "'");
  return columns[*i];
}

PlyTable read_ply(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path))
    throw IoError(IoError::Kind::kMissingFile, "file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::string line;
  if (!std::getline(in, line) || line != "ply") malformed(path, "missing 'ply' magic");

  bool ascii = false, have_format = false, in_vertex = false, seen_vertex = false;
  std::size_t count = 0;
  PlyTable table;
  std::vector<PlyType> types;
  while (true) {
    if (!std::getline(in, line)) malformed(path, "header is not terminated by end_header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end_header") break;
    if (key.empty() || key == "comment" || key == "obj_info") continue;
    if (key == "format") {
      std::string fmt, version;
      ls >> fmt >> version;
      if (fmt == "ascii") ascii = true;
      else if (fmt != "binary_little_endian") malformed(path, "unsupported format '" + fmt + "'");
      have_format = true;
    } else if (key == "element") {
      std::string name;
      long long n = -1;
      ls >> name >> n;
      if (!ls || n < 0) malformed(path, "bad element line '" + line + "'");
      if (name != "vertex" || seen_vertex) malformed(path, "only a single 'vertex' element is supported");
      seen_vertex = in_vertex = true;
      count = std::size_t(n);
    } else if (key == "property") {
      if (!in_vertex) malformed(path, "property outside the vertex element");
      std::string type, name;
      ls >> type >> name;
      if (type == "list") malformed(path, "list properties are not supported");
      const auto t = parse_type(type);
      if (!t || name.empty()) malformed(path, "bad property line '" + line + "'");
      if (table.find(name)) malformed(path, "duplicate property '" + name + "'");
      types.push_back(*t);
      table.names.push_back(name);
    } else {
      malformed(path, "unknown header keyword '" + key + "'");
    }
  }
  if (!have_format) malformed(path, "missing format line");
  if (!seen_vertex) malformed(path, "missing vertex element");

  const std::size_t props = types.size();
  table.columns.assign(props, std::vector<double>(count));
  if (ascii) {
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t p = 0; p < props; ++p)
        if (!(in >> table.columns[p][r])) malformed(path, "truncated payload");
    return table;
  }
  std::size_t stride = 0;
  std::vector<std::size_t> offsets;
  for (PlyType t : types) {
    offsets.push_back(stride);
    stride += type_size(t);
  }
  std::vector<unsigned char> payload(stride * count);
  in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size()));
  if (std::size_t(in.gcount()) != payload.size())
    malformed(path, "truncated payload (expected " + std::to_string(count) + " vertices)");
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t p = 0; p < props; ++p) table.columns[p][r] = decode(types[p], payload.data() + r * stride + offsets[p]);
  return table;
}

void write_ply(const std::filesystem::path& path, const PlyTable& table, const std::vector<std::string>& uchar_columns) {
  const std::size_t n = table.rows();
  for (const auto& c : table.columns)
    if (c.size() != n) throw InputError("write_ply: columns differ in length");
  std::vector<bool> as_uchar(table.names.size(), false);
  for (std::size_t p = 0; p < table.names.size(); ++p)
    as_uchar[p] = std::find(uchar_columns.begin(), uchar_columns.end(), table.names[p]) != uchar_columns.end();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoError::Kind::kWrite, "cannot open " + path.string() + " for writing");
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << n << "\n";
  for (std::size_t p = 0; p < table.names.size(); ++p)
    out << "property " << (as_uchar[p] ? "uchar " : "float ") << table.names[p] << "\n";
  out << "end_header\n";
  std::vector<char> row;
  for (std::size_t r = 0; r < n; ++r) {
    row.clear();
    for (std::size_t p = 0; p < table.names.size(); ++p) {
      if (as_uchar[p]) {
        row.push_back(char(std::uint8_t(std::clamp(std::lround(table.columns[p][r]), 0L, 255L))));
      } else {
        const float v = float(table.columns[p][r]);
        char bytes[4];
        std::memcpy(bytes, &v, 4);
        row.insert(row.end(), bytes, bytes + 4);
      }
    }
    out.write(row.data(), std::streamsize(row.size()));
  }
  if (!out) throw IoError(IoError::Kind::kWrite, "failed writing " + path.string());
}

}  // namespace bsplat
