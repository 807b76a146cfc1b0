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

#include "rtrec/codec.hpp"

#include <bit>
#include <cstdio>
#include <cstring>

#include "rtrec/error.hpp"

namespace rtrec::codec {

namespace {

template <typename T>
void put_le(std::string& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_floating_point_v<T>) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    bits = std::bit_cast<U>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T read() {
    if (bytes_.size() < sizeof(T)) throw ValidationError("truncated record value");
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[b])) << (8 * b);
    }
    bytes_.remove_prefix(sizeof(T));
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
      return std::bit_cast<T>(static_cast<U>(bits));
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string_view take(std::size_t n) {
    if (bytes_.size() < n) throw ValidationError("truncated record value");
    auto out = bytes_.substr(0, n);
    bytes_.remove_prefix(n);
    return out;
  }

  bool done() const noexcept { return bytes_.empty(); }

 private:
  std::string_view bytes_;
};

}  // namespace

std::string encode_vector(const Eigen::VectorXd& v) {
  std::string out;
  out.reserve(static_cast<std::size_t>(v.size()) * 4);
  for (Eigen::Index j = 0; j < v.size(); ++j) put_le<float>(out, static_cast<float>(v[j]));
  return out;
}

Eigen::VectorXd decode_vector(std::string_view bytes) {
  if (bytes.size() % 4 != 0) throw ValidationError("vector record is not a multiple of 4 bytes");
  Reader r(bytes);
  Eigen::VectorXd v(static_cast<Eigen::Index>(bytes.size() / 4));
  for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = r.read<float>();
  return v;
}

std::string encode_ratings(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += '\n';
    out += item;
  }
  return out;
}

std::vector<std::string> decode_ratings(std::string_view bytes) {
  std::vector<std::string> out;
  while (!bytes.empty()) {
    const auto nl = bytes.find('\n');
    out.emplace_back(bytes.substr(0, nl));
    if (nl == std::string_view::npos) break;
    bytes.remove_prefix(nl + 1);
  }
  return out;
}

std::string encode_content_model(const ContentModel& model) {
  std::string out;
  put_le<double>(out, model.intercept);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.coefficients.size()));
  for (const auto& [feature, coefficient] : model.coefficients) {
    if (feature.size() > 0xffff) throw ValidationError("feature id too long");
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(feature.size()));
    out += feature;
    put_le<double>(out, coefficient);
  }
  return out;
}

ContentModel decode_content_model(std::string_view bytes) {
  Reader r(bytes);
  ContentModel model;
  model.intercept = r.read<double>();
  const auto count = r.read<std::uint32_t>();
  for (std::uint32_t j = 0; j < count; ++j) {
    const auto len = r.read<std::uint16_t>();
    std::string feature(r.take(len));
    model.coefficients.emplace(std::move(feature), r.read<double>());
  }
  if (!r.done()) throw ValidationError("trailing bytes in content model record");
  return model;
}

std::string encode_count(std::uint64_t n) {
  std::string out;
  put_le<std::uint64_t>(out, n);
  return out;
}

std::uint64_t decode_count(std::string_view bytes) {
  Reader r(bytes);
  return r.read<std::uint64_t>();
}

std::string sequence_key(std::uint64_t sequence) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%020llu", static_cast<unsigned long long>(sequence));
  return buf;
}

}  // namespace rtrec::codec
