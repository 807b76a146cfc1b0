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
#include <stdexcept>
#include <string>

namespace rtrec {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input record or configuration failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Events handed to sessionize were not sorted by timestamp.
class OrderingError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Logistic training was given examples of a single class.
class DegenerateTrainingError : public Error {
 public:
  using Error::Error;
};

/// No content model exists for the requested user.
class ColdUserError : public Error {
 public:
  using Error::Error;
};

class StoreError : public Error {
 public:
  using Error::Error;
};

class QueueFullError : public Error {
 public:
  using Error::Error;
};

/// A batch failed while a stream was being applied. `batch_sequence`
/// identifies the batch so the caller can replay it.
class StreamError : public Error {
 public:
  StreamError(std::uint64_t batch_sequence, const std::string& what)
      : Error("batch " + std::to_string(batch_sequence) + ": " + what),
        batch_sequence_(batch_sequence) {}

  std::uint64_t batch_sequence() const noexcept { return batch_sequence_; }

 private:
  std::uint64_t batch_sequence_;
};

}  // namespace rtrec
