#include "samri/embedding_bank.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>

#include "samri/bytes.hpp"
#include "samri/checksum.hpp"
#include "samri/data_io.hpp"
#include "samri/error.hpp"

namespace samri {

namespace {

constexpr std::string_view kMagic = "SAMRIEB1";
constexpr std::string_view kEndMagic = "SAMRIEND";
constexpr std::size_t kHeaderBytes = 8 + 2 + 4 + 4 + 4 + 8 + 1;

std::uint64_t record_checksum(std::string_view key, std::span<const std::byte> payload) {
  Xxh64Stream s;
  s.update(std::as_bytes(std::span(key.data(), key.size())));
  s.update(payload);
  return s.digest();
}

void pread_exact(int fd, std::byte* buf, std::size_t n, std::uint64_t offset, const std::filesystem::path& path) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t r = ::pread(fd, buf + done, n - done, static_cast<off_t>(offset + done));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::IoError, "read " + path.string() + ": " + std::strerror(errno));
    }
    if (r == 0) throw Error(ErrorCode::TruncatedFile, path.string() + " ends inside a record");
    done += static_cast<std::size_t>(r);
  }
}

}  // namespace

// ---- writer -----------------------------------------------------------------------

std::vector<std::byte> encode_bank(const BankShape& shape, const std::vector<ImageEmbedding>& records) {
  ByteWriter w;
  w.str(kMagic);
  w.u16(kBankVersion);
  w.u32(shape.dim);
  w.u32(shape.grid_h);
  w.u32(shape.grid_w);
  w.u64(records.size());
  w.u8(kBankDtypeF32);
  std::vector<std::uint64_t> offsets;
  offsets.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0 && !(records[i - 1].key < r.key))
      throw Error(ErrorCode::InvalidArgument, "bank records must be sorted and unique near key " + r.key);
    if (r.data.size() != shape.floats() || r.dim != shape.dim || r.grid_h != shape.grid_h || r.grid_w != shape.grid_w)
      throw Error(ErrorCode::DimMismatch, "embedding for " + r.key + " does not match bank shape");
    if (r.key.size() > std::numeric_limits<std::uint16_t>::max())
      throw Error(ErrorCode::InvalidArgument, "bank key too long");
    offsets.push_back(w.size());
    w.u16(static_cast<std::uint16_t>(r.key.size()));
    w.str(r.key);
    const std::size_t payload_at = w.size();
    for (float v : r.data) w.f32(v);
    w.u64(record_checksum(r.key, std::span(w.data()).subspan(payload_at)));
  }
  const std::uint64_t footer_at = w.size();
  w.u64(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    w.u16(static_cast<std::uint16_t>(records[i].key.size()));
    w.str(records[i].key);
    w.u64(offsets[i]);
  }
  w.u64(footer_at);
  w.str(kEndMagic);
  return w.take();
}

// ---- reader -----------------------------------------------------------------------

EmbeddingBank EmbeddingBank::open(const std::filesystem::path& path) {
  EmbeddingBank b;
  b.path_ = path;
  b.fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (b.fd_ < 0) throw Error(ErrorCode::IoError, "open " + path.string() + ": " + std::strerror(errno));
  const off_t size = ::lseek(b.fd_, 0, SEEK_END);
  if (size < 0) throw Error(ErrorCode::IoError, "seek " + path.string());
  const auto fsize = static_cast<std::uint64_t>(size);
  if (fsize < kHeaderBytes + 8 + 16) throw Error(ErrorCode::TruncatedFile, path.string() + " is too short for a bank");

  std::vector<std::byte> head(kHeaderBytes);
  pread_exact(b.fd_, head.data(), head.size(), 0, path);
  ByteReader hr(head);
  if (hr.str(kMagic.size()) != kMagic) throw Error(ErrorCode::BadMagic, path.string() + " is not an embedding bank");
  const auto version = hr.u16();
  if (version != kBankVersion)
    throw Error(ErrorCode::UnsupportedDatatype, "bank version " + std::to_string(version));
  b.shape_.dim = hr.u32();
  b.shape_.grid_h = hr.u32();
  b.shape_.grid_w = hr.u32();
  const auto count = hr.u64();
  if (hr.u8() != kBankDtypeF32) throw Error(ErrorCode::UnsupportedDatatype, "bank dtype is not f32le");

  std::vector<std::byte> tail(16);
  pread_exact(b.fd_, tail.data(), 16, fsize - 16, path);
  ByteReader tr(tail);
  const auto footer_at = tr.u64();
  if (tr.str(kEndMagic.size()) != kEndMagic) throw Error(ErrorCode::BadMagic, path.string() + " has no bank footer");
  if (footer_at < kHeaderBytes || footer_at > fsize - 16) throw Error(ErrorCode::TruncatedFile, "bank footer offset");

  std::vector<std::byte> footer(fsize - 16 - footer_at);
  pread_exact(b.fd_, footer.data(), footer.size(), footer_at, path);
  ByteReader fr(footer);
  const auto n = fr.u64();
  if (n != count) throw Error(ErrorCode::ChecksumMismatch, "bank header count differs from footer count");
  b.index_.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string key = fr.str(fr.u16());
    const auto off = fr.u64();
    if (!b.index_.empty() && !(b.index_.back().first < key))
      throw Error(ErrorCode::ChecksumMismatch, "bank index is not sorted at " + key);
    b.index_.emplace_back(std::move(key), off);
  }
  return b;
}

EmbeddingBank::EmbeddingBank(EmbeddingBank&& o) noexcept
    : path_(std::move(o.path_)), fd_(std::exchange(o.fd_, -1)), shape_(o.shape_), index_(std::move(o.index_)) {}

EmbeddingBank& EmbeddingBank::operator=(EmbeddingBank&& o) noexcept {
  if (this != &o) {
    if (fd_ >= 0) ::close(fd_);
    path_ = std::move(o.path_);
    fd_ = std::exchange(o.fd_, -1);
    shape_ = o.shape_;
    index_ = std::move(o.index_);
  }
  return *this;
}

EmbeddingBank::~EmbeddingBank() {
  if (fd_ >= 0) ::close(fd_);
}

bool EmbeddingBank::contains(const std::string& key) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), key, [](const auto& e, const std::string& k) { return e.first < k; });
  return it != index_.end() && it->first == key;
}

std::vector<std::string> EmbeddingBank::keys() const {
  std::vector<std::string> out;
  out.reserve(index_.size());
  for (const auto& e : index_) out.push_back(e.first);
  return out;
}

ImageEmbedding EmbeddingBank::lookup(const std::string& key) const {
  auto it = std::lower_bound(index_.begin(), index_.end(), key, [](const auto& e, const std::string& k) { return e.first < k; });
  if (it == index_.end() || it->first != key) throw Error(ErrorCode::KeyNotFound, "bank has no key " + key);
  const std::size_t payload = shape_.floats() * 4;
  std::vector<std::byte> buf(2 + key.size() + payload + 8);
  pread_exact(fd_, buf.data(), buf.size(), it->second, path_);
  ByteReader r(buf);
  const std::string stored = r.str(r.u16());
  if (stored != key) throw Error(ErrorCode::ChecksumMismatch, "bank record key differs from index for " + key);
  const auto body = r.bytes(payload);
  if (record_checksum(key, body) != r.u64()) throw Error(ErrorCode::ChecksumMismatch, "bank record " + key + " is corrupt");
  ImageEmbedding e;
  e.key = key;
  e.dim = shape_.dim;
  e.grid_h = shape_.grid_h;
  e.grid_w = shape_.grid_w;
  e.data.resize(shape_.floats());
  ByteReader pr(body);
  for (auto& v : e.data) v = pr.f32();
  return e;
}

void EmbeddingBank::verify_all() const {
  for (const auto& e : index_) (void)lookup(e.first);
}

// ---- precompute -------------------------------------------------------------------

PrecomputeStats precompute(const std::filesystem::path& path, std::vector<std::string> keys, const EncodeFn& encode,
                           const BankShape& shape) {
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  PrecomputeStats st;
  st.requested = keys.size();

  std::vector<ImageEmbedding> existing;
  if (std::filesystem::exists(path)) {
    auto bank = EmbeddingBank::open(path);
    if (!(bank.shape() == shape))
      throw Error(ErrorCode::DimMismatch, "existing bank " + path.string() + " has a different embedding shape");
    for (const auto& k : bank.keys()) existing.push_back(bank.lookup(k));
  }

  std::vector<std::string> missing;
  {
    std::size_t j = 0;
    for (const auto& k : keys) {
      while (j < existing.size() && existing[j].key < k) ++j;
      if (j < existing.size() && existing[j].key == k) ++st.reused;
      else missing.push_back(k);
    }
  }
  if (missing.empty() && !existing.empty()) return st;

  std::vector<ImageEmbedding> fresh(missing.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < missing.size(); ++i) {
    try {
      ImageEmbedding e = encode(missing[i]);
      e.key = missing[i];
      fresh[i] = std::move(e);
    } catch (...) {
#pragma omp critical(samri_precompute_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  st.invocations = missing.size();

  std::vector<ImageEmbedding> all;
  all.reserve(existing.size() + fresh.size());
  std::merge(std::make_move_iterator(existing.begin()), std::make_move_iterator(existing.end()),
             std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()), std::back_inserter(all),
             [](const ImageEmbedding& a, const ImageEmbedding& b) { return a.key < b.key; });
  const auto bytes = encode_bank(shape, all);
  auto tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "rename " + tmp.string() + ": " + ec.message());
  st.rewritten = true;
  return st;
}

// ---- cost model ------------------------------------------------------------------

void CostModel::validate() const {
  for (double t : {t_data, t_encoder, t_decoder, t_backward})
    if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorCode::InvalidArgument, "cost model times must be >= 0");
  if (epochs < 1) throw Error(ErrorCode::InvalidArgument, "cost model needs at least one epoch");
}

PredictedTimes predicted_times(const CostModel& c) {
  c.validate();
  const double n = static_cast<double>(c.epochs);
  PredictedTimes p;
  p.total = n * (c.t_data + c.t_encoder + c.t_decoder + c.t_backward);
  p.pipeline = c.t_data + c.t_encoder + n * (c.t_decoder + c.t_backward);
  // total - pipeline = (N - 1)(data + enc); exact zero at N = 1
  p.savings = p.total > 0 ? (n - 1.0) * (c.t_data + c.t_encoder) / p.total : 0.0;
  return p;
}

}  // namespace samri
