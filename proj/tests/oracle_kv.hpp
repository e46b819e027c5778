#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvpbt/records.hpp"

namespace mvpbt::testing {

// Reference multi-version map: the independent source of truth every engine
// read is checked against.
class OracleKV {
 public:
  void apply_put(const std::string& key, const std::string& value,
                 Timestamp ts) {
    hist_[key].emplace_back(ts, value);
  }
  void apply_del(const std::string& key, Timestamp ts) {
    hist_[key].emplace_back(ts, std::nullopt);
  }

  std::optional<std::string> get(const std::string& key,
                                 const Snapshot& s) const {
    auto it = hist_.find(key);
    if (it == hist_.end()) return std::nullopt;
    for (auto rit = it->second.rbegin(); rit != it->second.rend(); ++rit) {
      if (rit->first <= s.read_ts && !s.is_active(rit->first)) {
        return rit->second;
      }
    }
    return std::nullopt;
  }

  std::vector<std::pair<std::string, std::string>> scan(
      const std::string& low, const std::string& high,
      const Snapshot& s) const {
    std::vector<std::pair<std::string, std::string>> out;
    for (auto it = hist_.lower_bound(low); it != hist_.end(); ++it) {
      if (it->first >= high) break;
      auto v = get(it->first, s);
      if (v) out.emplace_back(it->first, *v);
    }
    return out;
  }

  std::size_t key_count() const { return hist_.size(); }

 private:
  std::map<std::string,
           std::vector<std::pair<Timestamp, std::optional<std::string>>>>
      hist_;
};

}  // namespace mvpbt::testing
