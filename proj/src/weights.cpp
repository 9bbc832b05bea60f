#include "lrpgraph/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "lrpgraph/errors.hpp"

namespace lrp {

static_assert(std::endian::native == std::endian::little, "LRPW I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'R', 'P', 'W'};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

class Cursor {
 public:
  explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T read(const char* what) {
    T value;
    std::memcpy(&value, take(sizeof(T), what), sizeof(T));
    return value;
  }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedError(std::string("weight file truncated while reading ") + what +
                           " at byte " + std::to_string(pos_));
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

ParameterStore parse_weights(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw BadMagicError("not an LRPW weight file (bad magic)");
  }
  Cursor cur(bytes);
  cur.take(4, "magic");
  const auto version = cur.read<std::uint32_t>("version");
  if (version != kWeightFormatVersion) {
    throw VersionMismatchError("weight file version " + std::to_string(version) +
                               ", expected " + std::to_string(kWeightFormatVersion));
  }
  const auto count = cur.read<std::uint32_t>("tensor count");
  ParameterStore params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = cur.read<std::uint16_t>("name length");
    const auto* name_bytes = cur.take(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
    const auto ndim = cur.read<std::uint8_t>("rank");
    if (ndim == 0) throw LoaderError("tensor \"" + name + "\" has rank 0");
    Shape shape(ndim);
    for (auto& d : shape) {
      d = cur.read<std::uint32_t>("dims");
      if (d == 0) throw LoaderError("tensor \"" + name + "\" has a zero extent");
    }
    const auto dtype = cur.read<std::uint8_t>("dtype");
    if (dtype != 0) {
      throw UnsupportedDtypeError("tensor \"" + name + "\" has dtype " + std::to_string(dtype) +
                                  ", only 0 (f32) is supported");
    }
    const std::size_t numel = shape_numel(shape);
    const auto* raw = cur.take(numel * sizeof(float), "tensor data");
    std::vector<float> data(numel);
    std::memcpy(data.data(), raw, numel * sizeof(float));
    if (params.count(name)) throw LoaderError("duplicate tensor \"" + name + "\"");
    params.emplace(std::move(name), std::make_shared<const Tensor>(std::move(shape), std::move(data)));
  }
  const std::size_t body = cur.pos();
  const auto stored = cur.read<std::uint32_t>("checksum");
  if (cur.pos() != bytes.size()) {
    throw LoaderError(std::to_string(bytes.size() - cur.pos()) + " trailing bytes after checksum");
  }
  const auto actual = crc32_of(bytes.first(body));
  if (stored != actual) {
    throw ChecksumError("weight file checksum mismatch (stored " + std::to_string(stored) +
                        ", computed " + std::to_string(actual) + ")");
  }
  return params;
}

ParameterStore load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoaderError("cannot open weight file " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return parse_weights(bytes);
}

std::vector<std::uint8_t> serialize_weights(const ParameterStore& params) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kWeightFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    if (name.size() > 0xFFFF) throw LoaderError("tensor name too long: " + name);
    if (!tensor || tensor->rank() == 0 || tensor->rank() > 255) {
      throw LoaderError("tensor \"" + name + "\" cannot be serialized");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor->rank()));
    for (auto d : tensor->shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    put<std::uint8_t>(out, 0);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(tensor->data().data());
    out.insert(out.end(), raw, raw + tensor->size() * sizeof(float));
  }
  put<std::uint32_t>(out, crc32_of(out));
  return out;
}

void save_weights(const std::filesystem::path& path, const ParameterStore& params) {
  const auto bytes = serialize_weights(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoaderError("cannot write weight file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace lrp
