#include "mvpbt/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <thread>

#include "mvpbt/crc32.hpp"
#include "mvpbt/errors.hpp"
#include "mvpbt/varint.hpp"

namespace mvpbt {

namespace {

constexpr std::uint32_t kStoreMagic = 0x4D565053;  // "MVPS"
constexpr std::uint32_t kStoreVersion = 1;
constexpr std::size_t kSuperblockSize = 4096;

std::uint64_t now_us() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::steady_clock::now().time_since_epoch())
          .count());
}

// Emulated device service time. Sub-millisecond waits spin on the clock;
// timer-based sleeps overshoot such intervals by an order of magnitude.
void apply_latency(std::uint32_t us) {
  if (us == 0) return;
  if (us >= 1000) {
    std::this_thread::sleep_for(std::chrono::microseconds(us));
    return;
  }
  auto until = std::chrono::steady_clock::now() + std::chrono::microseconds(us);
  while (std::chrono::steady_clock::now() < until) {
  }
}

void put_u32_raw(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64_raw(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint32_t get_u32_raw(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
  return v;
}
std::uint64_t get_u64_raw(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
  return v;
}

void pwrite_fully(int fd, const void* buf, std::size_t n, std::uint64_t off) {
  const char* p = static_cast<const char*>(buf);
  while (n > 0) {
    ssize_t w = ::pwrite(fd, p, n, static_cast<off_t>(off));
    if (w < 0) {
      if (errno == EINTR) continue;
      throw EngineError(std::string("pwrite failed: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
    off += static_cast<std::uint64_t>(w);
  }
}

void pread_fully(int fd, void* buf, std::size_t n, std::uint64_t off) {
  char* p = static_cast<char*>(buf);
  while (n > 0) {
    ssize_t r = ::pread(fd, p, n, static_cast<off_t>(off));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw EngineError(std::string("pread failed: ") + std::strerror(errno));
    }
    if (r == 0) throw EngineError("pread hit end of file");
    p += r;
    n -= static_cast<std::size_t>(r);
    off += static_cast<std::uint64_t>(r);
  }
}

}  // namespace

PageStore::PageStore(const std::string& path, Options opts, bool create)
    : opts_(opts) {
  int flags = O_RDWR;
  if (create) flags |= O_CREAT | O_TRUNC;
  fd_ = ::open(path.c_str(), flags, 0644);
  if (fd_ < 0) {
    throw EngineError("cannot open store file " + path + ": " +
                      std::strerror(errno));
  }
  open_tick_us_ = now_us();
  if (create) {
    write_superblock();
  } else {
    load_superblock();
  }
}

PageStore::~PageStore() {
  if (fd_ >= 0) ::close(fd_);
}

void PageStore::trace_event(char op, std::uint64_t offset,
                            std::uint32_t length) {
  std::lock_guard lk(trace_mu_);
  trace_.push_back(TraceEvent{now_us() - open_tick_us_, op, offset, length});
}

std::vector<Extent> PageStore::allocate_and_write(
    std::span<const PageImage> pages) {
  std::lock_guard alloc_lk(alloc_mu_);
  std::uint64_t need = 0;
  for (const auto& p : pages) need += p.bytes.size();
  if (opts_.max_bytes != 0 && tail_ + need > opts_.max_bytes) {
    throw StorageFullError("store capacity exceeded");
  }
  std::vector<Extent> out;
  out.reserve(pages.size());
  std::uint64_t off = tail_;
  for (const auto& p : pages) {
    if (fail_after_writes_ == 0) {
      throw StorageFullError("injected write failure");
    }
    if (fail_after_writes_ > 0) --fail_after_writes_;
    Extent e;
    e.offset = off;
    e.length = static_cast<std::uint32_t>(p.bytes.size());
    e.page_id = p.page_id;
    e.state = ExtentState::Live;
    e.crc = crc32c(p.bytes);
    e.level = p.level;
    e.pnr = p.pnr;
    pwrite_fully(fd_, p.bytes.data(), p.bytes.size(), off);
    apply_latency(opts_.write_latency_us);
    trace_event('W', off, e.length);
    out.push_back(e);
    off += p.bytes.size();
  }
  tail_ = off;
  {
    std::unique_lock lk(extents_mu_);
    for (const auto& e : out) extents_[e.page_id] = e;
  }
  {
    std::lock_guard lk(counter_mu_);
    counters_.writes += pages.size();
    counters_.bytes_written += need;
    counters_.live_bytes += need;
  }
  return out;
}

std::string PageStore::read_page(std::uint64_t page_id) {
  Extent e;
  {
    std::shared_lock lk(extents_mu_);
    auto it = extents_.find(page_id);
    if (it == extents_.end()) {
      throw StateError("read of unknown page " + std::to_string(page_id));
    }
    if (it->second.state == ExtentState::Dead) {
      throw StateError("read of freed page " + std::to_string(page_id));
    }
    e = it->second;
  }
  std::string bytes(e.length, '\0');
  pread_fully(fd_, bytes.data(), e.length, e.offset);
  apply_latency(opts_.read_latency_us);
  if (crc32c(bytes) != e.crc) {
    throw CorruptionError("stored page checksum mismatch", page_id);
  }
  trace_event('R', e.offset, e.length);
  {
    std::lock_guard lk(counter_mu_);
    counters_.reads += 1;
    counters_.bytes_read += e.length;
  }
  return bytes;
}

std::uint64_t PageStore::free_extents(
    std::span<const std::uint64_t> page_ids) {
  std::uint64_t reclaimed = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> holes;
  {
    std::unique_lock lk(extents_mu_);
    for (std::uint64_t id : page_ids) {
      auto it = extents_.find(id);
      if (it == extents_.end() || it->second.state == ExtentState::Dead) {
        continue;  // double free is a no-op
      }
      it->second.state = ExtentState::Dead;
      reclaimed += it->second.length;
      holes.emplace_back(it->second.offset, it->second.length);
    }
  }
  for (auto [off, len] : holes) punch_hole(off, len);
  {
    std::lock_guard lk(counter_mu_);
    counters_.live_bytes -= reclaimed;
    counters_.reclaimed_bytes += reclaimed;
  }
  return reclaimed;
}

void PageStore::punch_hole(std::uint64_t offset, std::uint64_t length) {
#ifdef FALLOC_FL_PUNCH_HOLE
  (void)::fallocate(fd_, FALLOC_FL_PUNCH_HOLE | FALLOC_FL_KEEP_SIZE,
                    static_cast<off_t>(offset), static_cast<off_t>(length));
#else
  (void)offset;
  (void)length;
#endif
}

StoreReport PageStore::report() const {
  std::lock_guard lk(counter_mu_);
  return counters_;
}

std::vector<TraceEvent> PageStore::trace() const {
  std::lock_guard lk(trace_mu_);
  return trace_;
}

void PageStore::dump_trace_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw EngineError("cannot write trace file " + path);
  out << "tick,op,offset,length\n";
  std::lock_guard lk(trace_mu_);
  for (const auto& e : trace_) {
    out << e.tick_us << ',' << e.op << ',' << e.offset << ',' << e.length
        << '\n';
  }
}

std::uint64_t PageStore::allocate_page_id() {
  std::lock_guard lk(alloc_mu_);
  return next_page_id_++;
}

bool PageStore::has_page(std::uint64_t page_id) const {
  std::shared_lock lk(extents_mu_);
  auto it = extents_.find(page_id);
  return it != extents_.end() && it->second.state == ExtentState::Live;
}

std::optional<Extent> PageStore::extent_of(std::uint64_t page_id) const {
  std::shared_lock lk(extents_mu_);
  auto it = extents_.find(page_id);
  if (it == extents_.end()) return std::nullopt;
  return it->second;
}

void PageStore::commit_directory(const DirectorySnapshot& dir) {
  std::lock_guard alloc_lk(alloc_mu_);
  std::string blob;
  put_u64_raw(blob, dir.next_page_id);
  put_u64_raw(blob, dir.partitions.size());
  for (const auto& p : dir.partitions) {
    put_varint(blob, p.pnr);
    put_varint(blob, p.position);
    blob.push_back(p.type);
    blob.push_back(p.visible ? 1 : 0);
    put_u64_raw(blob, p.root_page_id);
    put_u64_raw(blob, p.first_leaf_page_id);
    blob.push_back(static_cast<char>(p.height));
    put_varint(blob, p.cover_lo);
    put_varint(blob, p.cover_hi);
  }
  std::vector<Extent> live;
  {
    std::shared_lock lk(extents_mu_);
    live.reserve(extents_.size());
    for (const auto& [id, e] : extents_) {
      if (e.state == ExtentState::Live) live.push_back(e);
    }
  }
  put_u64_raw(blob, live.size());
  for (const auto& e : live) {
    put_u64_raw(blob, e.page_id);
    put_u64_raw(blob, e.offset);
    put_u32_raw(blob, e.length);
    put_u32_raw(blob, e.crc);
    blob.push_back(static_cast<char>(e.level));
    put_varint(blob, e.pnr);
  }

  std::uint64_t off = tail_;
  if (opts_.max_bytes != 0 && tail_ + blob.size() > opts_.max_bytes) {
    throw StorageFullError("store capacity exceeded on directory commit");
  }
  pwrite_fully(fd_, blob.data(), blob.size(), off);
  trace_event('W', off, static_cast<std::uint32_t>(blob.size()));
  {
    std::lock_guard lk(counter_mu_);
    counters_.writes += 1;
    counters_.bytes_written += blob.size();
  }
  if (opts_.sync_on_commit) ::fdatasync(fd_);

  std::uint64_t old_dir_offset = dir_offset_;
  std::uint64_t old_dir_length = dir_length_;
  tail_ = off + blob.size();
  dir_offset_ = off;
  dir_length_ = blob.size();
  dir_crc_ = crc32c(blob);
  next_page_id_ = std::max(next_page_id_, dir.next_page_id);
  ++generation_;
  write_superblock();
  if (old_dir_length > 0) punch_hole(old_dir_offset, old_dir_length);
}

DirectorySnapshot PageStore::read_directory() {
  if (dir_length_ == 0) return DirectorySnapshot{next_page_id_, {}, {}};
  std::string blob(dir_length_, '\0');
  pread_fully(fd_, blob.data(), blob.size(), dir_offset_);
  if (crc32c(blob) != dir_crc_) {
    throw CorruptionError("directory checksum mismatch", 0);
  }
  DirectorySnapshot dir;
  const char* p = blob.data();
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > blob.size()) throw CorruptionError("directory overrun", 0);
  };
  need(16);
  dir.next_page_id = get_u64_raw(p);
  std::uint64_t n_parts = get_u64_raw(p + 8);
  pos = 16;
  std::string_view view(blob);
  for (std::uint64_t i = 0; i < n_parts; ++i) {
    DirectoryPartition d;
    d.pnr = static_cast<PartitionNumber>(get_varint(view, pos));
    d.position = static_cast<PartitionNumber>(get_varint(view, pos));
    need(2);
    d.type = blob[pos++];
    d.visible = blob[pos++] != 0;
    need(17);
    d.root_page_id = get_u64_raw(p + pos);
    pos += 8;
    d.first_leaf_page_id = get_u64_raw(p + pos);
    pos += 8;
    d.height = static_cast<std::uint8_t>(blob[pos++]);
    d.cover_lo = static_cast<PartitionNumber>(get_varint(view, pos));
    d.cover_hi = static_cast<PartitionNumber>(get_varint(view, pos));
    dir.partitions.push_back(d);
  }
  need(8);
  std::uint64_t n_ext = get_u64_raw(p + pos);
  pos += 8;
  for (std::uint64_t i = 0; i < n_ext; ++i) {
    Extent e;
    need(24);
    e.page_id = get_u64_raw(p + pos);
    pos += 8;
    e.offset = get_u64_raw(p + pos);
    pos += 8;
    e.length = get_u32_raw(p + pos);
    pos += 4;
    e.crc = get_u32_raw(p + pos);
    pos += 4;
    need(1);
    e.level = static_cast<std::uint8_t>(blob[pos++]);
    e.pnr = static_cast<PartitionNumber>(get_varint(view, pos));
    e.state = ExtentState::Live;
    dir.extents.push_back(e);
  }

  // Adopt the directory as the authoritative extent table.
  {
    std::unique_lock lk(extents_mu_);
    extents_.clear();
    std::uint64_t live = 0;
    for (const auto& e : dir.extents) {
      extents_[e.page_id] = e;
      live += e.length;
    }
    std::lock_guard clk(counter_mu_);
    counters_.live_bytes = live;
  }
  next_page_id_ = dir.next_page_id;
  return dir;
}

void PageStore::sync() { ::fdatasync(fd_); }

void PageStore::write_superblock() {
  std::string sb;
  sb.reserve(kSuperblockSize);
  put_u32_raw(sb, kStoreMagic);
  put_u32_raw(sb, kStoreVersion);
  put_u64_raw(sb, generation_);
  put_u64_raw(sb, dir_offset_);
  put_u64_raw(sb, dir_length_);
  put_u32_raw(sb, dir_crc_);
  put_u64_raw(sb, tail_);
  put_u64_raw(sb, next_page_id_);
  put_u32_raw(sb, crc32c(sb));
  sb.resize(kSuperblockSize, '\0');
  pwrite_fully(fd_, sb.data(), sb.size(), 0);
  if (opts_.sync_on_commit) ::fdatasync(fd_);
  std::lock_guard lk(counter_mu_);
  counters_.superblock_writes += 1;
}

void PageStore::load_superblock() {
  std::string sb(kSuperblockSize, '\0');
  pread_fully(fd_, sb.data(), sb.size(), 0);
  const char* p = sb.data();
  if (get_u32_raw(p) != kStoreMagic) {
    throw CorruptionError("bad store superblock magic", 0);
  }
  std::uint32_t stored_crc = get_u32_raw(p + 52);
  if (crc32c(std::string_view(sb.data(), 52)) != stored_crc) {
    throw CorruptionError("store superblock checksum mismatch", 0);
  }
  generation_ = get_u64_raw(p + 8);
  dir_offset_ = get_u64_raw(p + 16);
  dir_length_ = get_u64_raw(p + 24);
  dir_crc_ = get_u32_raw(p + 32);
  tail_ = get_u64_raw(p + 36);
  next_page_id_ = get_u64_raw(p + 44);
}

}  // namespace mvpbt
