#include "plroad/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "plroad/errors.hpp"

namespace plroad {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

template <typename U>
void put(std::vector<std::uint8_t>& out, U value) {
  std::uint8_t raw[sizeof(U)];
  std::memcpy(raw, &value, sizeof(U));
  out.insert(out.end(), raw, raw + sizeof(U));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, const std::string& origin)
      : bytes_(bytes), origin_(origin) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  void read(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw IoError(origin_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(std::string("truncated ") + what);
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out{'P', 'L', 'R', 'D'};
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.name.size() > 0xffff) throw ConfigError("checkpoint record name too long: " + r.name);
    std::size_t n = 1;
    for (auto d : r.dims) n *= d;
    if (n != r.values.size()) {
      throw ConfigError("checkpoint record '" + r.name + "' dims do not match payload size");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) put<std::uint32_t>(out, d);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(r.values.data());
    out.insert(out.end(), raw, raw + r.values.size() * sizeof(float));
  }
  return out;
}

std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                                                const std::string& origin) {
  Reader in(bytes, origin);
  char magic[4];
  in.read(magic, 4, "magic");
  if (std::memcmp(magic, "PLRD", 4) != 0) in.fail("bad magic (expected PLRD)");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    in.fail("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get<std::uint32_t>("record count");
  std::vector<CheckpointRecord> records;
  records.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointRecord r;
    const auto name_len = in.get<std::uint16_t>("name length");
    r.name.resize(name_len);
    in.read(r.name.data(), name_len, "name");
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) in.fail("implausible rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.dims.push_back(in.get<std::uint32_t>("dims"));
      n *= r.dims.back();
    }
    if (n > (bytes.size() - in.pos()) / sizeof(float)) in.fail("truncated payload");
    r.values.resize(n);
    in.read(r.values.data(), n * sizeof(float), "payload");
    records.push_back(std::move(r));
  }
  if (!in.done()) in.fail("trailing bytes after last record");
  return records;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string() + ": read failure");
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError(path.parent_path().string() + ": cannot create directory: " + ec.message());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp.string() + ": write failure");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": cannot rename temporary file: " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  write_file_atomic(path, encode_checkpoint(records));
}

std::vector<CheckpointRecord> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace plroad
