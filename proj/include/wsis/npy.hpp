#pragma once

// NPY v1.0 / v2.0 reader and v1.0 writer (little-endian, C order).
// Payloads are normalized to float64 or int32 on load.

#include <array>
#include <bit>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wsis/core.hpp"

namespace wsis::npy {

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

enum class DType { Float64, Int32 };

/// Dense C-order array holding either float64 or int32 values.
struct NdArray {
  std::vector<std::size_t> shape;
  std::variant<std::vector<double>, std::vector<std::int32_t>> data;

  [[nodiscard]] DType dtype() const {
    return std::holds_alternative<std::vector<double>>(data) ? DType::Float64 : DType::Int32;
  }
  [[nodiscard]] std::size_t rank() const { return shape.size(); }
  [[nodiscard]] std::size_t element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }
  [[nodiscard]] const std::vector<double>& f64() const { return std::get<std::vector<double>>(data); }
  [[nodiscard]] const std::vector<std::int32_t>& i32() const {
    return std::get<std::vector<std::int32_t>>(data);
  }

  /// Values converted to double regardless of storage type.
  [[nodiscard]] std::vector<double> as_f64() const {
    if (dtype() == DType::Float64) return f64();
    const auto& v = i32();
    return {v.begin(), v.end()};
  }

  friend bool operator==(const NdArray&, const NdArray&) = default;
};

inline NdArray make_f64(std::vector<std::size_t> shape, std::vector<double> values) {
  NdArray a{std::move(shape), std::move(values)};
  if (a.element_count() != a.f64().size()) throw ShapeError("npy: shape/payload size mismatch");
  return a;
}

inline NdArray make_i32(std::vector<std::size_t> shape, std::vector<std::int32_t> values) {
  NdArray a{std::move(shape), std::move(values)};
  if (a.element_count() != a.i32().size()) throw ShapeError("npy: shape/payload size mismatch");
  return a;
}

namespace detail {

inline constexpr std::array<char, 6> kMagic = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

struct Header {
  std::string descr;
  bool fortran_order = false;
  std::vector<std::size_t> shape;
};

// Minimal parser for the Python dict literal numpy writes into the header.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : s_(text) {}

  Header parse() {
    Header h;
    bool have_descr = false, have_order = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') break;
      const auto key = quoted();
      expect(':');
      if (key == "descr") {
        h.descr = quoted();
        have_descr = true;
      } else if (key == "fortran_order") {
        h.fortran_order = boolean();
        have_order = true;
      } else if (key == "shape") {
        h.shape = tuple();
        have_shape = true;
      } else {
        throw FormatError("npy: unexpected header key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    if (!have_descr || !have_order || !have_shape)
      throw FormatError("npy: header missing descr/fortran_order/shape");
    return h;
  }

 private:
  char peek() {
    if (pos_ >= s_.size()) throw FormatError("npy: truncated header dict");
    return s_[pos_];
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) throw FormatError(std::string("npy: expected '") + c + "' in header");
    ++pos_;
  }
  std::string quoted() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') throw FormatError("npy: expected quoted string in header");
    ++pos_;
    const auto end = s_.find(q, pos_);
    if (end == std::string_view::npos) throw FormatError("npy: unterminated string in header");
    std::string out(s_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }
  bool boolean() {
    skip_ws();
    if (s_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    throw FormatError("npy: expected True/False in header");
  }
  std::vector<std::size_t> tuple() {
    expect('(');
    std::vector<std::size_t> dims;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        break;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek())))
        throw FormatError("npy: bad shape entry in header");
      std::size_t v = 0;
      while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
        v = v * 10 + static_cast<std::size_t>(s_[pos_++] - '0');
      dims.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    return dims;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

template <class Src, class Dst>
std::vector<Dst> convert_payload(const std::vector<char>& raw, std::size_t count) {
  std::vector<Dst> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    Src v;
    std::memcpy(&v, raw.data() + i * sizeof(Src), sizeof(Src));
    if constexpr (std::is_integral_v<Src> && std::is_same_v<Dst, std::int32_t>) {
      if (std::cmp_less(v, std::numeric_limits<std::int32_t>::min()) ||
          std::cmp_greater(v, std::numeric_limits<std::int32_t>::max()))
        throw FormatError("npy: integer value does not fit int32");
    }
    out[i] = static_cast<Dst>(v);
  }
  return out;
}

}  // namespace detail

inline NdArray read_array(std::istream& in) {
  std::array<char, 6> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != detail::kMagic)
    throw FormatError("npy: bad magic string");
  unsigned char version[2];
  if (!in.read(reinterpret_cast<char*>(version), 2)) throw FormatError("npy: truncated version");
  std::uint32_t header_len = 0;
  if (version[0] == 1) {
    std::uint16_t len16 = 0;
    if (!in.read(reinterpret_cast<char*>(&len16), 2)) throw FormatError("npy: truncated header length");
    header_len = len16;
  } else if (version[0] == 2) {
    if (!in.read(reinterpret_cast<char*>(&header_len), 4))
      throw FormatError("npy: truncated header length");
  } else {
    throw FormatError("npy: unsupported format version " + std::to_string(version[0]));
  }
  std::string text(header_len, '\0');
  if (!in.read(text.data(), header_len)) throw FormatError("npy: truncated header");
  const auto header = detail::HeaderParser(text).parse();
  if (header.fortran_order) throw FormatError("npy: Fortran-order arrays are not supported");

  const auto& d = header.descr;
  if (d.size() < 3) throw FormatError("npy: bad descr '" + d + "'");
  if (d[0] == '>') throw FormatError("npy: big-endian arrays are not supported");
  const char kind = d[1];
  const auto width = static_cast<std::size_t>(std::stoul(d.substr(2)));
  const std::size_t count = std::accumulate(header.shape.begin(), header.shape.end(), std::size_t{1},
                                            std::multiplies<>());
  std::vector<char> raw(count * width);
  if (!raw.empty() && !in.read(raw.data(), static_cast<std::streamsize>(raw.size())))
    throw FormatError("npy: payload shorter than shape implies");

  NdArray out;
  out.shape = header.shape;
  using detail::convert_payload;
  if (kind == 'f' && width == 8) {
    out.data = convert_payload<double, double>(raw, count);
  } else if (kind == 'f' && width == 4) {
    out.data = convert_payload<float, double>(raw, count);
  } else if (kind == 'i' || kind == 'u' || kind == 'b') {
    std::vector<std::int32_t> v;
    if (kind == 'b' && width == 1) v = convert_payload<std::uint8_t, std::int32_t>(raw, count);
    else if (kind == 'i' && width == 1) v = convert_payload<std::int8_t, std::int32_t>(raw, count);
    else if (kind == 'i' && width == 2) v = convert_payload<std::int16_t, std::int32_t>(raw, count);
    else if (kind == 'i' && width == 4) v = convert_payload<std::int32_t, std::int32_t>(raw, count);
    else if (kind == 'i' && width == 8) v = convert_payload<std::int64_t, std::int32_t>(raw, count);
    else if (kind == 'u' && width == 1) v = convert_payload<std::uint8_t, std::int32_t>(raw, count);
    else if (kind == 'u' && width == 2) v = convert_payload<std::uint16_t, std::int32_t>(raw, count);
    else if (kind == 'u' && width == 4) v = convert_payload<std::uint32_t, std::int32_t>(raw, count);
    else if (kind == 'u' && width == 8) v = convert_payload<std::uint64_t, std::int32_t>(raw, count);
    else throw FormatError("npy: unsupported dtype '" + d + "'");
    out.data = std::move(v);
  } else {
    throw FormatError("npy: unsupported dtype '" + d + "'");
  }
  if (out.dtype() == DType::Float64 && !all_finite(out.f64()))
    throw ValidationError("npy: payload contains NaN or Inf");
  return out;
}

inline NdArray load_array(const std::filesystem::path& path, std::size_t expected_rank) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  auto a = read_array(in);
  if (a.rank() != expected_rank)
    throw ShapeError("'" + path.string() + "' has rank " + std::to_string(a.rank()) +
                     ", expected " + std::to_string(expected_rank));
  return a;
}

inline std::string header_bytes(const NdArray& a) {
  std::string dict = "{'descr': '";
  dict += a.dtype() == DType::Float64 ? "<f8" : "<i4";
  dict += "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    dict += std::to_string(a.shape[i]);
    if (a.shape.size() == 1 || i + 1 < a.shape.size()) dict += ",";
    if (i + 1 < a.shape.size()) dict += " ";
  }
  dict += "), }";
  // magic(6) + version(2) + len(2) + dict + '\n' padded to a multiple of 64
  const std::size_t preamble = 10;
  std::size_t total = preamble + dict.size() + 1;
  total = (total + 63) / 64 * 64;
  dict.append(total - preamble - dict.size() - 1, ' ');
  dict += '\n';
  if (dict.size() > std::numeric_limits<std::uint16_t>::max())
    throw FormatError("npy: header too long for v1.0");

  std::string out(detail::kMagic.begin(), detail::kMagic.end());
  out += '\x01';
  out += '\x00';
  const auto len = static_cast<std::uint16_t>(dict.size());
  out.append(reinterpret_cast<const char*>(&len), 2);
  out += dict;
  return out;
}

inline void write_array(std::ostream& os, const NdArray& a) {
  if (a.dtype() == DType::Float64 && !all_finite(a.f64()))
    throw ValidationError("npy: refusing to write NaN or Inf");
  if (a.element_count() != (a.dtype() == DType::Float64 ? a.f64().size() : a.i32().size()))
    throw ShapeError("npy: shape/payload size mismatch");
  const auto header = header_bytes(a);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  std::visit(
      [&](const auto& v) {
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(v[0])));
      },
      a.data);
}

inline void save_array(const std::filesystem::path& path, const NdArray& a) {
  // Validate before touching the filesystem.
  if (a.dtype() == DType::Float64 && !all_finite(a.f64()))
    throw ValidationError("npy: refusing to write NaN or Inf");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  write_array(os, a);
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

// Conversions between arrays and the domain planes.

inline NdArray to_array(const Plane<double>& p) {
  return make_f64({static_cast<std::size_t>(p.height()), static_cast<std::size_t>(p.width())},
                  p.vector());
}

inline NdArray to_array(const Plane<int>& p) {
  return make_i32({static_cast<std::size_t>(p.height()), static_cast<std::size_t>(p.width())},
                  {p.vector().begin(), p.vector().end()});
}

/// Stacks planes along a leading channel axis: shape (K, H, W).
inline NdArray to_array(const std::vector<Plane<double>>& planes) {
  if (planes.empty()) throw ShapeError("npy: cannot stack zero planes");
  const auto g = planes.front().grid();
  std::vector<double> v;
  v.reserve(planes.size() * g.size());
  for (const auto& p : planes) {
    require_same_grid(g, p.grid(), "npy stack");
    v.insert(v.end(), p.vector().begin(), p.vector().end());
  }
  return make_f64({planes.size(), static_cast<std::size_t>(g.height), static_cast<std::size_t>(g.width)},
                  std::move(v));
}

inline NdArray to_array(const OffsetMap& o) { return to_array(std::vector{o.dy(), o.dx()}); }

inline ImageGrid grid_of(const NdArray& a, std::size_t first_spatial_axis) {
  if (a.rank() < first_spatial_axis + 2) throw ShapeError("npy: array rank too small for an image");
  return ImageGrid(static_cast<int>(a.shape[first_spatial_axis]),
                   static_cast<int>(a.shape[first_spatial_axis + 1]));
}

inline std::vector<Plane<double>> to_planes(const NdArray& a) {
  if (a.rank() != 3) throw ShapeError("npy: expected (K, H, W) stack");
  const auto g = grid_of(a, 1);
  const auto values = a.as_f64();
  std::vector<Plane<double>> planes;
  for (std::size_t k = 0; k < a.shape[0]; ++k) {
    const auto first = values.begin() + static_cast<std::ptrdiff_t>(k * g.size());
    planes.emplace_back(g, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(g.size())));
  }
  return planes;
}

inline ActivationStack load_activation_stack(const std::filesystem::path& path) {
  return ActivationStack(to_planes(load_array(path, 3)));
}

/// Loads an (H, W) integer label array. The value 255 is treated as ignore.
inline SemanticMap load_semantic_map(const std::filesystem::path& path, int num_classes = 0) {
  const auto a = load_array(path, 2);
  if (a.dtype() != DType::Int32) throw FormatError("semantic map '" + path.string() + "' must be integer");
  const auto g = grid_of(a, 0);
  Plane<int> labels(g, std::vector<int>(a.i32().begin(), a.i32().end()));
  PixelSet ignored;
  int max_label = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == SemanticMap::kIgnoreLabel) {
      ignored.push_back(static_cast<std::int32_t>(i));
      labels[i] = 0;
    } else {
      max_label = std::max(max_label, labels[i]);
    }
  }
  return SemanticMap(std::move(labels), num_classes > 0 ? num_classes : std::max(1, max_label),
                     std::move(ignored));
}

}  // namespace wsis::npy
