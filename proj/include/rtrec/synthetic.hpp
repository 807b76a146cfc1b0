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

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rtrec/content.hpp"
#include "rtrec/eval.hpp"
#include "rtrec/ingest.hpp"

namespace rtrec {

/// Parameters of the cluster-structured stand-in dataset.
struct SyntheticSpec {
  std::size_t n_users = 2000;
  std::size_t n_items = 1000;
  std::size_t n_clusters = 4;
  double popularity_skew = 1.0;  // power-law exponent, 0 = uniform
  double actions_per_user = 30.0;
  double cluster_affinity = 0.8;  // chance an action stays in the user's cluster
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;                        // significant tuples
  std::vector<InteractionEvent> events;   // click/share/comment stream that yields `dataset`
  std::vector<ArticleDocument> articles;  // one per item, vocabulary tied to its cluster
  std::vector<std::size_t> item_cluster;
  std::vector<std::size_t> user_cluster;
};

/// Users pick distinct items, mostly from their own cluster, weighted by a
/// power law over a random popularity order. Events are laid out per user
/// so that sessionization plus the significance rule recover exactly the
/// sampled pairs; short non-significant clicks are mixed in.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

std::string synthetic_user_id(std::size_t index);
std::string synthetic_item_id(std::size_t index);

}  // namespace rtrec
