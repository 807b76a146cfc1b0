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

#include "rtrec/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include "rtrec/error.hpp"

namespace rtrec {

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::Click:
      return "click";
    case EventKind::Share:
      return "share";
    case EventKind::Comment:
      return "comment";
  }
  return "click";
}

std::optional<EventKind> parse_event_kind(std::string_view text) noexcept {
  if (text == "click") return EventKind::Click;
  if (text == "share") return EventKind::Share;
  if (text == "comment") return EventKind::Comment;
  return std::nullopt;
}

namespace {

bool has_separator(std::string_view s) {
  return s.find_first_of("\t\r\n") != std::string_view::npos;
}

}  // namespace

void validate(const InteractionEvent& event) {
  if (event.user_id.empty()) throw ValidationError("empty user_id");
  if (event.item_id.empty()) throw ValidationError("empty item_id");
  if (has_separator(event.user_id) || has_separator(event.item_id)) {
    throw ValidationError("ids must not contain tab or newline characters");
  }
  if (event.timestamp < 0) throw ValidationError("negative timestamp");
}

void SignificanceRule::validate() const {
  if (!(dwell_threshold_seconds > 0.0) || !std::isfinite(dwell_threshold_seconds)) {
    throw ValidationError("dwell threshold must be positive");
  }
  if (!(session_gap_seconds > 0.0) || !std::isfinite(session_gap_seconds)) {
    throw ValidationError("session gap must be positive");
  }
}

std::vector<DwellEntry> sessionize(std::span<const InteractionEvent> events,
                                   const SignificanceRule& rule) {
  std::vector<DwellEntry> out;
  const InteractionEvent* prev_click = nullptr;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (i > 0) {
      if (e.user_id != events[0].user_id) {
        throw ValidationError("sessionize expects events of a single user");
      }
      if (e.timestamp < events[i - 1].timestamp) {
        throw OrderingError("events out of order at index " + std::to_string(i));
      }
    }
    if (e.kind != EventKind::Click) continue;
    if (prev_click != nullptr) {
      const double gap = static_cast<double>(e.timestamp - prev_click->timestamp);
      if (gap < rule.session_gap_seconds) out.push_back({prev_click->item_id, gap});
    }
    prev_click = &e;
  }
  return out;
}

AggregateMap aggregate(std::span<const InteractionEvent> events, const SignificanceRule& rule) {
  std::map<std::string, std::vector<InteractionEvent>> by_user;
  for (const auto& e : events) by_user[e.user_id].push_back(e);

  AggregateMap out;
  auto entry = [&out](const std::string& user, const std::string& item) -> UserItemAggregate& {
    auto [it, inserted] = out.try_emplace({user, item});
    if (inserted) {
      it->second.user_id = user;
      it->second.item_id = item;
    }
    return it->second;
  };

  for (auto& [user, list] : by_user) {
    std::stable_sort(list.begin(), list.end(),
                     [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
    for (const auto& e : list) {
      auto& agg = entry(user, e.item_id);
      if (e.kind == EventKind::Share) ++agg.shares;
      if (e.kind == EventKind::Comment) ++agg.comments;
    }
    for (const auto& d : sessionize(list, rule)) entry(user, d.item_id).dwell_seconds += d.dwell_seconds;
  }
  return out;
}

bool is_significant(const UserItemAggregate& agg, const SignificanceRule& rule) noexcept {
  return agg.dwell_seconds > rule.dwell_threshold_seconds || agg.shares > 0 || agg.comments > 0;
}

StreamAggregator::StreamAggregator(SignificanceRule rule) : rule_(rule) { rule_.validate(); }

std::vector<UserItemKey> StreamAggregator::bump(const std::string& user, const std::string& item,
                                                double dwell, std::uint64_t shares,
                                                std::uint64_t comments) {
  auto [it, inserted] = aggregates_.try_emplace({user, item});
  auto& agg = it->second;
  if (inserted) {
    agg.user_id = user;
    agg.item_id = item;
  }
  const bool before = is_significant(agg, rule_);
  agg.dwell_seconds += dwell;
  agg.shares += shares;
  agg.comments += comments;
  if (!before && is_significant(agg, rule_)) return {it->first};
  return {};
}

std::vector<UserItemKey> StreamAggregator::add(const InteractionEvent& event) {
  validate(event);
  auto [ts, first] = last_timestamp_.try_emplace(event.user_id, event.timestamp);
  if (!first) {
    if (event.timestamp < ts->second) {
      throw OrderingError("event for user " + event.user_id + " precedes the user's previous event");
    }
    ts->second = event.timestamp;
  }

  switch (event.kind) {
    case EventKind::Share:
      return bump(event.user_id, event.item_id, 0.0, 1, 0);
    case EventKind::Comment:
      return bump(event.user_id, event.item_id, 0.0, 0, 1);
    case EventKind::Click:
      break;
  }

  std::vector<UserItemKey> out;
  auto [lc, fresh] = last_click_.try_emplace(event.user_id);
  if (!fresh) {
    const double gap = static_cast<double>(event.timestamp - lc->second.timestamp);
    if (gap < rule_.session_gap_seconds) out = bump(event.user_id, lc->second.item_id, gap, 0, 0);
  }
  // A click always registers the pair even before it earns any dwell.
  auto current = bump(event.user_id, event.item_id, 0.0, 0, 0);
  out.insert(out.end(), current.begin(), current.end());
  lc->second = {event.item_id, event.timestamp};
  return out;
}

const UserItemAggregate* StreamAggregator::find(const std::string& user_id,
                                                const std::string& item_id) const {
  auto it = aggregates_.find({user_id, item_id});
  return it == aggregates_.end() ? nullptr : &it->second;
}

InteractionEvent parse_event_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (fields.size() != 4) {
    throw ValidationError("expected 4 tab-separated fields, got " + std::to_string(fields.size()));
  }
  InteractionEvent e;
  e.user_id = std::string(fields[0]);
  e.item_id = std::string(fields[1]);
  auto kind = parse_event_kind(fields[2]);
  if (!kind) throw ValidationError("unknown event kind '" + std::string(fields[2]) + "'");
  e.kind = *kind;
  const auto ts = fields[3];
  auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), e.timestamp);
  if (ec != std::errc{} || ptr != ts.data() + ts.size() || ts.empty()) {
    throw ValidationError("bad timestamp '" + std::string(ts) + "'");
  }
  validate(e);
  return e;
}

std::string format_event_line(const InteractionEvent& event) {
  std::string out;
  out.reserve(event.user_id.size() + event.item_id.size() + 32);
  out += event.user_id;
  out += '\t';
  out += event.item_id;
  out += '\t';
  out += to_string(event.kind);
  out += '\t';
  out += std::to_string(event.timestamp);
  return out;
}

std::vector<InteractionEvent> read_events(std::istream& in) {
  std::vector<InteractionEvent> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_event_line(line));
    } catch (const ValidationError& err) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + err.what());
    }
  }
  return out;
}

void write_events(std::ostream& out, std::span<const InteractionEvent> events) {
  for (const auto& e : events) out << format_event_line(e) << '\n';
}

}  // namespace rtrec
