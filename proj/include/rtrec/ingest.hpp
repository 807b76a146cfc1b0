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
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rtrec {

enum class EventKind { Click, Share, Comment };

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view text) noexcept;

struct InteractionEvent {
  std::string user_id;
  std::string item_id;
  EventKind kind = EventKind::Click;
  std::int64_t timestamp = 0;  // seconds since epoch

  friend bool operator==(const InteractionEvent&, const InteractionEvent&) = default;
};

/// Throws ValidationError for empty ids, ids containing TAB or newline,
/// or a negative timestamp.
void validate(const InteractionEvent& event);

struct UserItemAggregate {
  std::string user_id;
  std::string item_id;
  double dwell_seconds = 0.0;
  std::uint64_t shares = 0;
  std::uint64_t comments = 0;

  friend bool operator==(const UserItemAggregate&, const UserItemAggregate&) = default;
};

struct SignificanceRule {
  double dwell_threshold_seconds = 10.0;
  double session_gap_seconds = 1800.0;

  void validate() const;
};

struct DwellEntry {
  std::string item_id;
  double dwell_seconds = 0.0;

  friend bool operator==(const DwellEntry&, const DwellEntry&) = default;
};

/// Dwell estimation for one user's time-ordered events. Each click that is
/// followed by another click within `session_gap_seconds` (strictly less)
/// receives the gap as dwell; the final click never receives dwell.
/// Shares and comments are ignored here.
///
/// Throws OrderingError if timestamps decrease and ValidationError if the
/// events belong to more than one user.
std::vector<DwellEntry> sessionize(std::span<const InteractionEvent> events,
                                   const SignificanceRule& rule);

using UserItemKey = std::pair<std::string, std::string>;
using AggregateMap = std::map<UserItemKey, UserItemAggregate>;

/// Groups events by user, orders each user's events by timestamp (stable,
/// so equal timestamps keep input order), and sums dwell plus share and
/// comment counts per (user, item).
AggregateMap aggregate(std::span<const InteractionEvent> events, const SignificanceRule& rule);

/// Dwell strictly above the threshold, or any share, or any comment.
bool is_significant(const UserItemAggregate& agg, const SignificanceRule& rule) noexcept;

/// Incremental form of aggregate() for a live stream: remembers each
/// user's last click so a later click can assign its dwell. Events must
/// arrive in per-user timestamp order.
class StreamAggregator {
 public:
  explicit StreamAggregator(SignificanceRule rule = {});

  /// Applies one event and returns the (user, item) pairs that became
  /// significant because of it (at most one).
  std::vector<UserItemKey> add(const InteractionEvent& event);

  const UserItemAggregate* find(const std::string& user_id, const std::string& item_id) const;
  std::size_t size() const noexcept { return aggregates_.size(); }

 private:
  struct LastClick {
    std::string item_id;
    std::int64_t timestamp = 0;
  };

  std::vector<UserItemKey> bump(const std::string& user, const std::string& item,
                                double dwell, std::uint64_t shares, std::uint64_t comments);

  SignificanceRule rule_;
  AggregateMap aggregates_;
  std::map<std::string, LastClick> last_click_;
  std::map<std::string, std::int64_t> last_timestamp_;
};

// Event file: one `user_id<TAB>item_id<TAB>kind<TAB>timestamp` record per line.

/// Throws ValidationError describing the defect.
InteractionEvent parse_event_line(std::string_view line);
std::string format_event_line(const InteractionEvent& event);

/// Reads every non-blank line. Errors carry the 1-based line number.
std::vector<InteractionEvent> read_events(std::istream& in);
void write_events(std::ostream& out, std::span<const InteractionEvent> events);

}  // namespace rtrec
