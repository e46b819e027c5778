#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvpbt {

// Base class for all engine-raised errors.
class EngineError : public std::runtime_error {
 public:
  explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

// A page or file region failed checksum or structural validation.
class CorruptionError : public EngineError {
 public:
  CorruptionError(const std::string& what, std::uint64_t page_id)
      : EngineError(what + " (page_id=" + std::to_string(page_id) + ")"),
        page_id_(page_id) {}
  std::uint64_t page_id() const { return page_id_; }

 private:
  std::uint64_t page_id_;
};

// The backing file hit its configured capacity. Retryable after reclamation.
class StorageFullError : public EngineError {
 public:
  using EngineError::EngineError;
};

// An operation was issued against an object in the wrong state
// (commit on aborted tx, probe of an unbuilt filter, read after free, ...).
class StateError : public EngineError {
 public:
  using EngineError::EngineError;
};

}  // namespace mvpbt
