#include "retgen/core/io.hpp"
#include "retgen/core/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace retgen {

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ------------------------------------------------------------ binary format

void BinaryWriter::tensor(const Tensor& t) {
  i64(t.rows());
  i64(t.cols());
  raw(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()));
}

void BinaryReader::take(void* dst, std::size_t n) {
  if (pos_ + n > buf_.size()) throw Error("truncated binary file");
  std::memcpy(dst, buf_.data() + pos_, n);
  pos_ += n;
}

std::string BinaryReader::str() {
  const std::uint64_t n = u64();
  if (pos_ + n > buf_.size()) throw Error("truncated binary file");
  std::string s = buf_.substr(pos_, n);
  pos_ += n;
  return s;
}

Tensor BinaryReader::tensor() {
  const std::int64_t rows = i64();
  const std::int64_t cols = i64();
  if (rows < 0 || cols < 0) throw Error("corrupt tensor shape");
  Tensor t(rows, cols);
  take(t.data(), sizeof(double) * static_cast<std::size_t>(t.size()));
  return t;
}

void BinaryReader::expect_magic(std::string_view magic) {
  std::string got(magic.size(), '\0');
  take(got.data(), magic.size());
  if (got != magic) throw Error("bad file magic: expected '" + std::string(magic) + "'");
}

// --------------------------------------------------------------- checkpoint

namespace {
constexpr std::string_view kCheckpointMagic = "RETGENCK";
}

const Tensor* Checkpoint::find(const std::string& id) const {
  for (const auto& [name, t] : tensors) {
    if (name == id) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Json& meta, const ConstParameterList& params) {
  BinaryWriter w;
  w.raw(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(Checkpoint::kVersion);
  w.str(meta.dump());
  w.u64(params.size());
  for (const Parameter* p : params) {
    w.str(p->id);
    w.tensor(p->value);
  }
  write_file_atomic(path, w.bytes());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  BinaryReader r(read_file(path));
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.meta = Json::parse(r.str());
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string id = r.str();
    Tensor t = r.tensor();
    ckpt.tensors.emplace_back(std::move(id), std::move(t));
  }
  if (!r.done()) throw Error("trailing bytes in checkpoint '" + path.string() + "'");
  return ckpt;
}

void load_parameters(const Checkpoint& ckpt, const ParameterList& params) {
  for (const Parameter* p : params) {
    const Tensor* t = ckpt.find(p->id);
    if (!t) throw Error("checkpoint is missing parameter '" + p->id + "'");
    if (t->rows() != p->value.rows() || t->cols() != p->value.cols()) {
      throw ShapeError("checkpoint parameter '" + p->id + "' has shape " + shape_str(*t) +
                       ", model expects " + shape_str(p->value));
    }
  }
  for (Parameter* p : params) p->value = *ckpt.find(p->id);
}

}  // namespace retgen
