// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rtrec {

enum class Namespace : std::uint8_t {
  Events,
  Ratings,
  UserVec,
  ItemVec,
  ContentModel,
  Article,
  Popularity,
  Checkpoint,
};

inline constexpr std::array<Namespace, 8> kAllNamespaces{
    Namespace::Events,       Namespace::Ratings, Namespace::UserVec,    Namespace::ItemVec,
    Namespace::ContentModel, Namespace::Article, Namespace::Popularity, Namespace::Checkpoint,
};

std::string_view to_string(Namespace ns) noexcept;

struct Record {
  std::string key;
  std::string value;
  std::uint64_t version = 0;
};

// On-disk frame, all integers little-endian:
//   length:u32 | crc32:u32 | version:u64 | key_len:u16 | key | value
// `length` counts the bytes after the crc field and the crc (IEEE, as in
// zlib) covers exactly those bytes.
inline constexpr std::size_t kFrameHeader = 4 + 4 + 8 + 2;
inline constexpr std::size_t kMaxKeyLength = 0xffff;

std::string encode_frame(std::uint64_t version, std::string_view key, std::string_view value);

struct DecodedFrame {
  std::uint64_t version = 0;
  std::string key;
  std::string value;
  std::size_t frame_bytes = 0;
};

/// Decodes the frame at the start of `bytes`; nullopt when the bytes are
/// short, malformed or fail the checksum.
std::optional<DecodedFrame> decode_frame(std::string_view bytes);

enum class Durability {
  Sync,      // fdatasync before put() returns
  Buffered,  // written to the OS; survives a process kill, not power loss
};

struct StoreOptions {
  Durability durability = Durability::Sync;
};

struct TruncatedTail {
  Namespace ns;
  std::filesystem::path file;
  std::uint64_t kept_bytes = 0;
  std::uint64_t dropped_bytes = 0;
};

struct RecoveryReport {
  std::size_t frames_replayed = 0;
  std::vector<TruncatedTail> truncated;

  bool clean() const noexcept { return truncated.empty(); }
};

/// Append-only record store: one log plus one snapshot file per namespace
/// under a directory. Reads are served from an in-memory index rebuilt on
/// open. Writers are serialized; readers run concurrently with them.
class Store {
 public:
  /// Opens (creating if needed) the store in `dir` and replays snapshot
  /// and log. An invalid frame ends the log: the file is truncated there
  /// and the cut is listed in recovery_report().
  static std::unique_ptr<Store> recover(const std::filesystem::path& dir,
                                        StoreOptions options = {});

  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Appends and returns the key's new version (1 for a fresh key).
  /// Throws StoreError on I/O failure or an oversized key.
  std::uint64_t put(Namespace ns, std::string_view key, std::string_view value);

  struct Write {
    Namespace ns;
    std::string key;
    std::string value;
  };

  /// Appends every write, then syncs each touched log once. Returns the
  /// new versions in input order. Each record is individually atomic; a
  /// crash may keep any prefix of a log's writes.
  std::vector<std::uint64_t> put_batch(std::span<const Write> writes);

  std::optional<std::string> get(Namespace ns, std::string_view key) const;
  std::optional<Record> get_record(Namespace ns, std::string_view key) const;

  /// Keys starting with `prefix`, in lexicographic order, from one
  /// consistent snapshot.
  std::vector<std::pair<std::string, std::string>> scan(Namespace ns,
                                                        std::string_view prefix = {}) const;

  std::size_t size(Namespace ns) const;

  /// Rewrites each namespace's snapshot from the index and empties its log.
  void compact();

  const RecoveryReport& recovery_report() const noexcept { return report_; }
  const std::filesystem::path& directory() const noexcept { return dir_; }

  /// get/get_record/scan calls so far.
  std::uint64_t read_count() const noexcept { return reads_.load(std::memory_order_relaxed); }

 private:
  Store(std::filesystem::path dir, StoreOptions options);

  using Index = std::map<std::string, Record, std::less<>>;

  void load_namespace(Namespace ns);
  std::filesystem::path log_path(Namespace ns) const;
  std::filesystem::path snapshot_path(Namespace ns) const;

  std::filesystem::path dir_;
  StoreOptions options_;
  RecoveryReport report_;
  std::array<int, kAllNamespaces.size()> log_fds_{};

  mutable std::shared_mutex index_mutex_;
  std::array<Index, kAllNamespaces.size()> index_;
  std::mutex append_mutex_;
  mutable std::atomic<std::uint64_t> reads_{0};
};

}  // namespace rtrec
