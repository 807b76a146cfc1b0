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

#include "rtrec/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rtrec/error.hpp"

namespace rtrec {

std::string_view to_string(Namespace ns) noexcept {
  switch (ns) {
    case Namespace::Events:
      return "events";
    case Namespace::Ratings:
      return "ratings";
    case Namespace::UserVec:
      return "user_vec";
    case Namespace::ItemVec:
      return "item_vec";
    case Namespace::ContentModel:
      return "content_model";
    case Namespace::Article:
      return "article";
    case Namespace::Popularity:
      return "popularity";
    case Namespace::Checkpoint:
      return "checkpoint";
  }
  return "unknown";
}

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * b)) & 0xff));
  }
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + b])) << (8 * b);
  }
  return static_cast<T>(v);
}

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; frames are far below 4 GiB.
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::size_t index_of(Namespace ns) { return static_cast<std::size_t>(ns); }

[[noreturn]] void throw_errno(const std::string& what, const std::filesystem::path& path) {
  throw StoreError(what + " " + path.string() + ": " + std::strerror(errno));
}

void write_all(int fd, std::string_view bytes, const std::filesystem::path& path) {
  while (!bytes.empty()) {
    const ssize_t n = ::write(fd, bytes.data(), bytes.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write", path);
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void sync_directory(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

}  // namespace

std::string encode_frame(std::uint64_t version, std::string_view key, std::string_view value) {
  if (key.size() > kMaxKeyLength) throw StoreError("key longer than 65535 bytes");
  const std::size_t body = 8 + 2 + key.size() + value.size();
  if (body > 0xffffffffULL) throw StoreError("record too large");
  std::string payload;
  payload.reserve(body);
  put_le<std::uint64_t>(payload, version);
  put_le<std::uint16_t>(payload, static_cast<std::uint16_t>(key.size()));
  payload.append(key);
  payload.append(value);

  std::string frame;
  frame.reserve(8 + body);
  put_le<std::uint32_t>(frame, static_cast<std::uint32_t>(body));
  put_le<std::uint32_t>(frame, crc_of(payload));
  frame += payload;
  return frame;
}

std::optional<DecodedFrame> decode_frame(std::string_view bytes) {
  if (bytes.size() < kFrameHeader) return std::nullopt;
  const auto body = get_le<std::uint32_t>(bytes, 0);
  if (body < 10 || bytes.size() - 8 < body) return std::nullopt;
  const std::string_view payload = bytes.substr(8, body);
  if (crc_of(payload) != get_le<std::uint32_t>(bytes, 4)) return std::nullopt;
  const auto key_len = get_le<std::uint16_t>(payload, 8);
  if (10u + key_len > body) return std::nullopt;
  DecodedFrame out;
  out.version = get_le<std::uint64_t>(payload, 0);
  out.key = std::string(payload.substr(10, key_len));
  out.value = std::string(payload.substr(10 + key_len));
  out.frame_bytes = 8 + body;
  return out;
}

Store::Store(std::filesystem::path dir, StoreOptions options)
    : dir_(std::move(dir)), options_(options) {
  log_fds_.fill(-1);
}

Store::~Store() {
  for (int fd : log_fds_) {
    if (fd >= 0) ::close(fd);
  }
}

std::filesystem::path Store::log_path(Namespace ns) const {
  return dir_ / (std::string(to_string(ns)) + ".log");
}

std::filesystem::path Store::snapshot_path(Namespace ns) const {
  return dir_ / (std::string(to_string(ns)) + ".snap");
}

std::unique_ptr<Store> Store::recover(const std::filesystem::path& dir, StoreOptions options) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw StoreError("cannot create " + dir.string() + ": " + ec.message());
  std::unique_ptr<Store> store(new Store(dir, options));
  for (auto ns : kAllNamespaces) store->load_namespace(ns);
  return store;
}

void Store::load_namespace(Namespace ns) {
  auto& index = index_[index_of(ns)];
  auto apply = [&](std::string_view bytes, const std::filesystem::path& path, bool truncate_tail) {
    std::size_t offset = 0;
    while (offset < bytes.size()) {
      auto frame = decode_frame(bytes.substr(offset));
      if (!frame) break;
      offset += frame->frame_bytes;
      ++report_.frames_replayed;
      auto& slot = index[frame->key];
      if (frame->version > slot.version) {
        slot.key = frame->key;
        slot.value = std::move(frame->value);
        slot.version = frame->version;
      }
    }
    if (offset < bytes.size()) {
      report_.truncated.push_back({ns, path, offset, bytes.size() - offset});
      if (truncate_tail && ::truncate(path.c_str(), static_cast<off_t>(offset)) != 0) {
        throw_errno("truncate", path);
      }
    }
  };

  const auto snap = snapshot_path(ns);
  apply(read_file(snap), snap, true);
  const auto log = log_path(ns);
  apply(read_file(log), log, true);

  const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw_errno("open", log);
  log_fds_[index_of(ns)] = fd;
}

std::uint64_t Store::put(Namespace ns, std::string_view key, std::string_view value) {
  std::lock_guard append(append_mutex_);
  auto& index = index_[index_of(ns)];
  std::uint64_t version = 1;
  if (auto it = index.find(key); it != index.end()) version = it->second.version + 1;

  const auto frame = encode_frame(version, key, value);
  const int fd = log_fds_[index_of(ns)];
  write_all(fd, frame, log_path(ns));
  if (options_.durability == Durability::Sync && ::fdatasync(fd) != 0) {
    throw_errno("fdatasync", log_path(ns));
  }

  std::unique_lock lock(index_mutex_);
  auto [it, inserted] = index.try_emplace(std::string(key));
  it->second.key = std::string(key);
  it->second.value = std::string(value);
  it->second.version = version;
  return version;
}

std::vector<std::uint64_t> Store::put_batch(std::span<const Write> writes) {
  std::lock_guard append(append_mutex_);
  std::vector<std::uint64_t> versions;
  versions.reserve(writes.size());
  std::array<std::string, kAllNamespaces.size()> buffers;
  // Versions within the batch build on each other for repeated keys.
  std::map<std::pair<std::size_t, std::string_view>, std::uint64_t> pending;
  for (const auto& w : writes) {
    const auto slot = index_of(w.ns);
    std::uint64_t version = 1;
    if (auto p = pending.find({slot, w.key}); p != pending.end()) {
      version = p->second + 1;
    } else if (auto it = index_[slot].find(w.key); it != index_[slot].end()) {
      version = it->second.version + 1;
    }
    pending[{slot, w.key}] = version;
    buffers[slot] += encode_frame(version, w.key, w.value);
    versions.push_back(version);
  }
  for (auto ns : kAllNamespaces) {
    const auto slot = index_of(ns);
    if (buffers[slot].empty()) continue;
    write_all(log_fds_[slot], buffers[slot], log_path(ns));
    if (options_.durability == Durability::Sync && ::fdatasync(log_fds_[slot]) != 0) {
      throw_errno("fdatasync", log_path(ns));
    }
  }
  std::unique_lock lock(index_mutex_);
  for (std::size_t j = 0; j < writes.size(); ++j) {
    const auto& w = writes[j];
    auto& rec = index_[index_of(w.ns)][w.key];
    rec.key = w.key;
    rec.value = w.value;
    rec.version = versions[j];
  }
  return versions;
}

std::optional<std::string> Store::get(Namespace ns, std::string_view key) const {
  auto record = get_record(ns, key);
  if (!record) return std::nullopt;
  return std::move(record->value);
}

std::optional<Record> Store::get_record(Namespace ns, std::string_view key) const {
  reads_.fetch_add(1, std::memory_order_relaxed);
  std::shared_lock lock(index_mutex_);
  const auto& index = index_[index_of(ns)];
  auto it = index.find(key);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

std::vector<std::pair<std::string, std::string>> Store::scan(Namespace ns,
                                                             std::string_view prefix) const {
  reads_.fetch_add(1, std::memory_order_relaxed);
  std::shared_lock lock(index_mutex_);
  const auto& index = index_[index_of(ns)];
  std::vector<std::pair<std::string, std::string>> out;
  for (auto it = index.lower_bound(prefix); it != index.end(); ++it) {
    if (!it->first.starts_with(prefix)) break;
    out.emplace_back(it->first, it->second.value);
  }
  return out;
}

std::size_t Store::size(Namespace ns) const {
  std::shared_lock lock(index_mutex_);
  return index_[index_of(ns)].size();
}

void Store::compact() {
  std::lock_guard append(append_mutex_);
  for (auto ns : kAllNamespaces) {
    const auto snap = snapshot_path(ns);
    const auto tmp = dir_ / (std::string(to_string(ns)) + ".snap.tmp");
    {
      const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
      if (fd < 0) throw_errno("open", tmp);
      std::string bytes;
      {
        std::shared_lock lock(index_mutex_);
        for (const auto& [key, record] : index_[index_of(ns)]) {
          bytes += encode_frame(record.version, key, record.value);
        }
      }
      try {
        write_all(fd, bytes, tmp);
      } catch (...) {
        ::close(fd);
        throw;
      }
      if (::fsync(fd) != 0) {
        ::close(fd);
        throw_errno("fsync", tmp);
      }
      ::close(fd);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, snap, ec);
    if (ec) throw StoreError("rename " + tmp.string() + ": " + ec.message());
    sync_directory(dir_);
    // Replaying a stale log over the new snapshot is harmless: versions
    // only move forward, so a crash here loses nothing.
    const int fd = log_fds_[index_of(ns)];
    if (::ftruncate(fd, 0) != 0) throw_errno("ftruncate", log_path(ns));
    ::fsync(fd);
  }
}

}  // namespace rtrec
