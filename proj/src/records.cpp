#include "mvpbt/records.hpp"

#include <algorithm>

#include "mvpbt/errors.hpp"
#include "mvpbt/varint.hpp"

namespace mvpbt {

PartitionNumber VersionRecord::cached_target() const {
  if (rtype != RecordType::CachedIndex) {
    throw StateError("cached_target on non-index record");
  }
  return get_pnr_be(value);
}

bool Snapshot::is_active(Timestamp ts) const {
  return std::binary_search(active_set.begin(), active_set.end(), ts);
}

Snapshot make_snapshot(Timestamp read_ts, std::vector<Timestamp> active_set) {
  std::sort(active_set.begin(), active_set.end());
  for (Timestamp t : active_set) {
    if (t > read_ts) throw std::invalid_argument("active id above read_ts");
  }
  return Snapshot{read_ts, std::move(active_set)};
}

bool is_visible(const VersionRecord& r, const Snapshot& s) {
  return r.ts <= s.read_ts && !s.is_active(r.ts);
}

const VersionRecord* resolve_chain(std::span<const VersionRecord> candidates,
                                   const Snapshot& s, std::size_t* probes) {
  std::size_t inspected = 0;
  const VersionRecord* result = nullptr;
  for (const VersionRecord& r : candidates) {
    ++inspected;
    if (!is_visible(r, s)) continue;
    // First visible record decides the outcome; everything older is either
    // invalidated by it or shadowed by its type.
    if (!ends_chain(r.rtype)) result = &r;
    break;
  }
  if (probes) *probes = inspected;
  return result;
}

void encode_record(const VersionRecord& r, std::string& out) {
  out.push_back(static_cast<char>(r.rtype));
  put_varint(out, r.ts);
  put_varint(out, r.key.user_key.size());
  out.append(r.key.user_key);
  put_varint(out, r.value.size());
  out.append(r.value);
}

VersionRecord decode_record(std::string_view buf, std::size_t& pos,
                            PartitionNumber page_pnr) {
  if (pos >= buf.size()) throw CorruptionError("record beyond payload", 0);
  VersionRecord r;
  auto raw = static_cast<std::uint8_t>(buf[pos++]);
  if (raw < 1 || raw > 5) throw CorruptionError("bad record type", 0);
  r.rtype = static_cast<RecordType>(raw);
  r.ts = get_varint(buf, pos);
  std::uint64_t klen = get_varint(buf, pos);
  if (pos + klen > buf.size()) throw CorruptionError("record key overrun", 0);
  r.key.pnr = page_pnr;
  r.key.user_key.assign(buf.substr(pos, klen));
  pos += klen;
  std::uint64_t vlen = get_varint(buf, pos);
  if (pos + vlen > buf.size()) throw CorruptionError("record value overrun", 0);
  r.value.assign(buf.substr(pos, vlen));
  pos += vlen;
  return r;
}

std::size_t record_wire_size(const VersionRecord& r) {
  return 1 + varint_size(r.ts) + varint_size(r.key.user_key.size()) +
         r.key.user_key.size() + varint_size(r.value.size()) + r.value.size();
}

std::string encode_cached_target(PartitionNumber pnr) {
  std::string out;
  put_pnr_be(out, pnr);
  return out;
}

}  // namespace mvpbt
