#include "mvpbt/page.hpp"

#include <cstring>

#include "mvpbt/crc32.hpp"
#include "mvpbt/errors.hpp"
#include "mvpbt/varint.hpp"

namespace mvpbt {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint16_t get_u16(const char* p) {
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                    (static_cast<std::uint8_t>(p[1]) << 8));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
  return v;
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(p[i]);
  return v;
}

std::string assemble(const PageHeader& hdr, std::string payload) {
  std::string out;
  out.reserve(kPageHeaderSize + payload.size());
  put_u32(out, kPageMagic);
  put_u64(out, hdr.page_id);
  out.push_back(static_cast<char>(hdr.level));
  out.push_back(hdr.ptype);
  put_u16(out, hdr.entry_count);
  put_u16(out, hdr.pnr);
  put_u16(out, hdr.position);
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  put_u32(out, crc32c(payload));
  put_u32(out, 0);  // reserved
  out.append(payload);
  return out;
}

PageHeader parse_header(std::string_view bytes) {
  if (bytes.size() < kPageHeaderSize) throw CorruptionError("short page", 0);
  const char* p = bytes.data();
  if (get_u32(p) != kPageMagic) throw CorruptionError("bad page magic", 0);
  PageHeader hdr;
  hdr.page_id = get_u64(p + 4);
  hdr.level = static_cast<std::uint8_t>(p[12]);
  hdr.ptype = p[13];
  hdr.entry_count = get_u16(p + 14);
  hdr.pnr = get_u16(p + 16);
  hdr.position = get_u16(p + 18);
  hdr.payload_len = get_u32(p + 20);
  hdr.crc = get_u32(p + 24);
  // Trailing bytes beyond the payload are page padding.
  if (kPageHeaderSize + hdr.payload_len > bytes.size()) {
    throw CorruptionError("page payload length mismatch", hdr.page_id);
  }
  std::string_view payload = bytes.substr(kPageHeaderSize, hdr.payload_len);
  if (crc32c(payload) != hdr.crc) {
    throw CorruptionError("page checksum mismatch", hdr.page_id);
  }
  return hdr;
}

// Parses the record header at pos: type, ts and the key bounds, without
// touching the value bytes.
RecordRef parse_record_ref(std::string_view payload, std::size_t pos,
                           std::uint64_t page_id) {
  RecordRef ref;
  if (pos >= payload.size()) throw CorruptionError("slot out of range", page_id);
  auto raw = static_cast<std::uint8_t>(payload[pos++]);
  if (raw < 1 || raw > 5) throw CorruptionError("bad record type", page_id);
  ref.rtype = static_cast<RecordType>(raw);
  ref.ts = get_varint(payload, pos);
  std::uint64_t klen = get_varint(payload, pos);
  if (pos + klen > payload.size()) {
    throw CorruptionError("record key overrun", page_id);
  }
  ref.user_key = payload.substr(pos, klen);
  pos += klen;
  std::uint64_t vlen = get_varint(payload, pos);
  if (pos + vlen > payload.size()) {
    throw CorruptionError("record value overrun", page_id);
  }
  ref.value = payload.substr(pos, vlen);
  return ref;
}

}  // namespace

std::string encode_leaf_page(std::uint64_t page_id, char ptype,
                             PartitionNumber pnr, PartitionNumber position,
                             std::uint64_t next_leaf,
                             std::span<const VersionRecord> records) {
  PageHeader hdr;
  hdr.page_id = page_id;
  hdr.level = 0;
  hdr.ptype = ptype;
  hdr.entry_count = static_cast<std::uint16_t>(records.size());
  hdr.pnr = pnr;
  hdr.position = position;
  std::string payload;
  put_u64(payload, next_leaf);
  std::size_t slots_at = payload.size();
  payload.resize(slots_at + 2 * records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::size_t off = payload.size();
    payload[slots_at + 2 * i] = static_cast<char>(off & 0xFF);
    payload[slots_at + 2 * i + 1] = static_cast<char>(off >> 8);
    encode_record(records[i], payload);
  }
  return assemble(hdr, std::move(payload));
}

std::string encode_leaf_page_raw(std::uint64_t page_id, char ptype,
                                 PartitionNumber pnr, PartitionNumber position,
                                 std::uint64_t next_leaf,
                                 std::string_view record_bytes,
                                 std::span<const std::uint32_t> rel_slots) {
  PageHeader hdr;
  hdr.page_id = page_id;
  hdr.level = 0;
  hdr.ptype = ptype;
  hdr.entry_count = static_cast<std::uint16_t>(rel_slots.size());
  hdr.pnr = pnr;
  hdr.position = position;
  std::string payload;
  payload.reserve(8 + 2 * rel_slots.size() + record_bytes.size());
  put_u64(payload, next_leaf);
  std::size_t base = 8 + 2 * rel_slots.size();
  for (std::uint32_t rel : rel_slots) {
    std::size_t off = base + rel;
    payload.push_back(static_cast<char>(off & 0xFF));
    payload.push_back(static_cast<char>(off >> 8));
  }
  payload.append(record_bytes);
  return assemble(hdr, std::move(payload));
}

std::string encode_inner_page(std::uint64_t page_id, std::uint8_t level,
                              char ptype, PartitionNumber pnr,
                              PartitionNumber position,
                              std::span<const InnerEntry> entries) {
  PageHeader hdr;
  hdr.page_id = page_id;
  hdr.level = level;
  hdr.ptype = ptype;
  hdr.entry_count = static_cast<std::uint16_t>(entries.size());
  hdr.pnr = pnr;
  hdr.position = position;
  std::string payload;
  payload.resize(2 * entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::size_t off = payload.size();
    payload[2 * i] = static_cast<char>(off & 0xFF);
    payload[2 * i + 1] = static_cast<char>(off >> 8);
    put_varint(payload, entries[i].separator.size());
    payload.append(entries[i].separator);
    put_u64(payload, entries[i].child);
  }
  return assemble(hdr, std::move(payload));
}

DecodedPage decode_page(std::string_view bytes) {
  DecodedPage page;
  page.hdr = parse_header(bytes);
  std::string_view payload = bytes.substr(kPageHeaderSize, page.hdr.payload_len);
  std::size_t pos = 0;
  if (page.hdr.level == 0) {
    if (payload.size() < 8 + 2 * static_cast<std::size_t>(page.hdr.entry_count)) {
      throw CorruptionError("leaf payload too short", page.hdr.page_id);
    }
    page.next_leaf = get_u64(payload.data());
    pos = 8 + 2 * static_cast<std::size_t>(page.hdr.entry_count);
    page.records.reserve(page.hdr.entry_count);
    for (std::uint16_t i = 0; i < page.hdr.entry_count; ++i) {
      page.records.push_back(decode_record(payload, pos, page.hdr.pnr));
    }
  } else {
    pos = 2 * static_cast<std::size_t>(page.hdr.entry_count);
    if (payload.size() < pos) {
      throw CorruptionError("inner payload too short", page.hdr.page_id);
    }
    page.entries.reserve(page.hdr.entry_count);
    for (std::uint16_t i = 0; i < page.hdr.entry_count; ++i) {
      InnerEntry e;
      std::uint64_t len = get_varint(payload, pos);
      if (pos + len + 8 > payload.size()) {
        throw CorruptionError("inner entry overrun", page.hdr.page_id);
      }
      e.separator.assign(payload.substr(pos, len));
      pos += len;
      e.child = get_u64(payload.data() + pos);
      pos += 8;
      page.entries.push_back(std::move(e));
    }
  }
  if (pos != payload.size()) {
    throw CorruptionError("trailing page payload bytes", page.hdr.page_id);
  }
  return page;
}

PageView::PageView(std::string bytes) : bytes_(std::move(bytes)) {
  hdr_ = parse_header(bytes_);
  payload_off_ = kPageHeaderSize;
  if (hdr_.level == 0) {
    if (hdr_.payload_len < 8 + 2 * static_cast<std::size_t>(hdr_.entry_count)) {
      throw CorruptionError("leaf payload too short", hdr_.page_id);
    }
    next_leaf_ = get_u64(bytes_.data() + payload_off_);
    slots_off_ = 8;
  } else {
    if (hdr_.payload_len < 2 * static_cast<std::size_t>(hdr_.entry_count)) {
      throw CorruptionError("inner payload too short", hdr_.page_id);
    }
    slots_off_ = 0;
  }
}

std::size_t PageView::slot(std::size_t i) const {
  const char* p = bytes_.data() + payload_off_ + slots_off_ + 2 * i;
  return get_u16(p);
}

RecordRef PageView::record(std::size_t i) const {
  std::string_view payload(bytes_.data() + payload_off_, hdr_.payload_len);
  return parse_record_ref(payload, slot(i), hdr_.page_id);
}

std::string_view PageView::record_span(std::size_t i) const {
  std::string_view payload(bytes_.data() + payload_off_, hdr_.payload_len);
  std::size_t start = slot(i);
  std::size_t end =
      i + 1 < hdr_.entry_count ? slot(i + 1) : hdr_.payload_len;
  if (start > end || end > payload.size()) {
    throw CorruptionError("slot directory out of order", hdr_.page_id);
  }
  return payload.substr(start, end - start);
}

VersionRecord PageView::materialize(std::size_t i) const {
  RecordRef ref = record(i);
  VersionRecord r;
  r.rtype = ref.rtype;
  r.ts = ref.ts;
  r.key.pnr = hdr_.pnr;
  r.key.user_key.assign(ref.user_key);
  r.value.assign(ref.value);
  return r;
}

std::string_view PageView::separator(std::size_t i) const {
  std::string_view payload(bytes_.data() + payload_off_, hdr_.payload_len);
  std::size_t pos = slot(i);
  std::uint64_t len = get_varint(payload, pos);
  if (pos + len + 8 > payload.size()) {
    throw CorruptionError("inner entry overrun", hdr_.page_id);
  }
  return payload.substr(pos, len);
}

std::uint64_t PageView::child(std::size_t i) const {
  std::string_view payload(bytes_.data() + payload_off_, hdr_.payload_len);
  std::size_t pos = slot(i);
  std::uint64_t len = get_varint(payload, pos);
  if (pos + len + 8 > payload.size()) {
    throw CorruptionError("inner entry overrun", hdr_.page_id);
  }
  return get_u64(payload.data() + pos + len);
}

std::size_t PageView::lower_bound(std::string_view key) const {
  std::size_t lo = 0, hi = size();
  while (lo < hi) {
    std::size_t mid = (lo + hi) / 2;
    if (record(mid).user_key < key) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

std::size_t PageView::route(std::string_view key) const {
  // Last entry whose separator is <= key; entry 0 catches keys below all.
  std::size_t lo = 0, hi = size();
  while (lo + 1 < hi) {
    std::size_t mid = (lo + hi) / 2;
    if (separator(mid) <= key) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

std::size_t inner_entry_wire_size(const InnerEntry& e) {
  // Two slot bytes ride along with every entry.
  return 2 + varint_size(e.separator.size()) + e.separator.size() + 8;
}

std::string shortest_separator(std::string_view prev_last,
                               std::string_view next_first) {
  if (!(prev_last < next_first)) {
    throw std::invalid_argument("separator bounds out of order");
  }
  std::size_t i = 0;
  while (i < prev_last.size() && i < next_first.size() &&
         prev_last[i] == next_first[i]) {
    ++i;
  }
  // next_first[0..i] is strictly greater than prev_last and <= next_first.
  return std::string(next_first.substr(0, std::min(i + 1, next_first.size())));
}

}  // namespace mvpbt
