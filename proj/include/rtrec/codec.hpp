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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rtrec/content.hpp"

namespace rtrec::codec {

// Value encodings for store records. Integers and floats are little-endian.

/// k 32-bit floats.
std::string encode_vector(const Eigen::VectorXd& v);
Eigen::VectorXd decode_vector(std::string_view bytes);

/// Sorted item ids joined by '\n'.
std::string encode_ratings(const std::vector<std::string>& items);
std::vector<std::string> decode_ratings(std::string_view bytes);

/// intercept:f64 | count:u32 | count x (len:u16 | feature id | coefficient:f64)
std::string encode_content_model(const ContentModel& model);
ContentModel decode_content_model(std::string_view bytes);

std::string encode_count(std::uint64_t n);
std::uint64_t decode_count(std::string_view bytes);

/// Zero-padded decimal so keys sort numerically.
std::string sequence_key(std::uint64_t sequence);

}  // namespace rtrec::codec
