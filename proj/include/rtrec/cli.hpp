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

#include <iosfwd>
#include <vector>

#include "rtrec/content.hpp"

namespace rtrec {

/// One JSON object per line with item_id, section, author, title, body.
std::vector<ArticleDocument> read_articles(std::istream& in);
void write_articles(std::ostream& out, const std::vector<ArticleDocument>& articles);

/// Entry point of the `rtrec` tool. Returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace rtrec
