#include "muse/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "muse/checksum.hpp"
#include "muse/error.hpp"

namespace muse {

namespace {

constexpr char kMagic[8] = {'M', 'U', 'S', 'E', 'E', 'M', 'B', '1'};

template <typename T>
bool read_pod(std::istream &in, T &out) {
  in.read(reinterpret_cast<char *>(&out), sizeof(T));
  return in.gcount() == sizeof(T);
}

template <typename T>
void write_pod(std::ostream &out, const T &v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

}  // namespace

EmbeddingTable EmbeddingTable::load(const std::string &path, uint32_t expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("embedding file not found: " + path);

  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw data_error("parse error at byte 0: bad magic in " + path);

  uint32_t dim = 0;
  uint64_t count = 0;
  if (!read_pod(in, dim)) throw data_error("parse error at byte 8: truncated header");
  if (!read_pod(in, count)) throw data_error("parse error at byte 12: truncated header");
  if (dim == 0) throw data_error("schema error: dim = 0 in header");
  if (dim != expected_dim)
    throw data_error("schema error: file dim " + std::to_string(dim) +
                     " != declared dim " + std::to_string(expected_dim));

  EmbeddingTable t(dim);
  t.data_.reserve(size_t(count) * dim);
  t.index_.reserve(size_t(count));
  t.zero_.assign(dim, 0.0f);

  const size_t record_bytes = 8 + size_t(dim) * 4;
  std::vector<float> vals(dim);
  for (uint64_t i = 0; i < count; ++i) {
    const uint64_t offset = 20 + i * record_bytes;
    uint64_t id = 0;
    if (!read_pod(in, id))
      throw data_error("parse error at byte " + std::to_string(offset) +
                       ": truncated record " + std::to_string(i));
    in.read(reinterpret_cast<char *>(vals.data()), std::streamsize(dim) * 4);
    if (in.gcount() != std::streamsize(dim) * 4)
      throw data_error("parse error at byte " + std::to_string(offset + 8) +
                       ": truncated record " + std::to_string(i));
    for (uint32_t d = 0; d < dim; ++d)
      if (!std::isfinite(vals[d]))
        throw data_error("parse error at byte " + std::to_string(offset + 8) +
                         ": non-finite value for item " + std::to_string(id));
    if (t.index_.count(id))
      throw data_error("integrity error: duplicate item id " + std::to_string(id));
    t.index_.emplace(id, t.index_.size());
    t.data_.insert(t.data_.end(), vals.begin(), vals.end());
  }
  return t;
}

void EmbeddingTable::save(const std::string &path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open for write: " + path);
  out.write(kMagic, 8);
  write_pod(out, dim_);
  write_pod(out, uint64_t(index_.size()));
  for (uint64_t id : ids_sorted()) {
    write_pod(out, id);
    const uint64_t row = index_.at(id);
    out.write(reinterpret_cast<const char *>(data_.data() + row * dim_),
              std::streamsize(dim_) * 4);
  }
  out.close();
  if (!out) throw data_error("write failed: " + path);

  nlohmann::json manifest = {
      {"dim", dim_},
      {"count", index_.size()},
      {"normalized", normalized_},
      {"source_checksum", file_checksum_hex(path)},
  };
  std::ofstream mf(path + ".manifest.json", std::ios::trunc);
  mf << manifest.dump(2) << "\n";
}

void EmbeddingTable::insert(uint64_t id, std::span<const float> values) {
  if (values.size() != dim_)
    throw data_error("schema error: vector length " + std::to_string(values.size()) +
                     " != dim " + std::to_string(dim_));
  if (index_.count(id))
    throw data_error("integrity error: duplicate item id " + std::to_string(id));
  if (zero_.empty()) zero_.assign(dim_, 0.0f);
  index_.emplace(id, index_.size());
  data_.insert(data_.end(), values.begin(), values.end());
}

void EmbeddingTable::normalize() {
  for (const auto &[id, row] : index_) {
    float *v = data_.data() + row * dim_;
    double sq = 0.0;
    for (uint32_t d = 0; d < dim_; ++d) sq += double(v[d]) * double(v[d]);
    const double norm = std::sqrt(sq);
    if (norm < 1e-12)
      throw data_error("degenerate embedding (zero vector) for item " + std::to_string(id));
    const float inv = float(1.0 / norm);
    for (uint32_t d = 0; d < dim_; ++d) v[d] *= inv;
  }
  normalized_ = true;
}

std::span<const float> EmbeddingTable::lookup(uint64_t id, LookupMode mode) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    if (mode == LookupMode::strict)
      throw data_error("missing embedding for item " + std::to_string(id));
    misses_.fetch_add(1, std::memory_order_relaxed);
    return {zero_.data(), dim_};
  }
  return {data_.data() + it->second * dim_, dim_};
}

uint64_t EmbeddingTable::content_checksum() const {
  uint64_t h = kFnvOffset;
  h = fnv1a64(&dim_, sizeof(dim_), h);
  for (uint64_t id : ids_sorted()) {
    h = fnv1a64(&id, sizeof(id), h);
    const uint64_t row = index_.at(id);
    h = fnv1a64(data_.data() + row * dim_, size_t(dim_) * 4, h);
  }
  return h;
}

std::vector<uint64_t> EmbeddingTable::ids_sorted() const {
  std::vector<uint64_t> ids;
  ids.reserve(index_.size());
  for (const auto &[id, _] : index_) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool EmbeddingTable::operator==(const EmbeddingTable &o) const {
  if (dim_ != o.dim_ || normalized_ != o.normalized_ || index_.size() != o.index_.size())
    return false;
  for (const auto &[id, row] : index_) {
    auto it = o.index_.find(id);
    if (it == o.index_.end()) return false;
    if (std::memcmp(data_.data() + row * dim_, o.data_.data() + it->second * dim_,
                    size_t(dim_) * 4) != 0)
      return false;
  }
  return true;
}

}  // namespace muse
