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

#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include <gtest/gtest.h>

#include "rtrec/cli.hpp"

namespace rtrec {
namespace {

namespace fs = std::filesystem;

const std::string kCli = RTREC_CLI_PATH;

struct Result {
  int status = -1;
  std::string out;
};

// Runs through sh, stderr folded into the output.
Result run(const std::string& command) {
  Result r;
  FILE* pipe = ::popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), got);
  const int status = ::pclose(pipe);
  r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("rtrec_cli_" + std::to_string(rd()) + std::to_string(::getpid()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

TEST(Cli, GenTrainEvalPipelinePrintsCsv) {
  const auto r = run(kCli + " gen --users 120 --items 60 --seed 3 | " + kCli +
                     " train --k 4 --epochs 2 | " + kCli + " eval run --k 4 --epochs 2");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "system,precision_at_10,users_evaluated");
  EXPECT_NE(r.out.find("\nglobal_top,"), std::string::npos);
  EXPECT_NE(r.out.find("\nrandom,"), std::string::npos);
  EXPECT_NE(r.out.find("\ncollaborative,"), std::string::npos);
}

TEST(Cli, SweepsWriteTwoColumns) {
  TempDir dir;
  ASSERT_EQ(run(kCli + " gen --users 120 --items 60 --out " + (dir / "ev.tsv")).status, 0);
  auto r = run(kCli + " eval sweep-batch --k 4 --epochs 2 --sizes 100,400 --events " + (dir / "ev.tsv"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "batch_size,precision_at_10");
  EXPECT_EQ(count_lines(r.out), 4u) << r.out;
  r = run(kCli + " sweep-parallel --k 4 --epochs 2 --batch-size 100 --levels 1,2 --events " + (dir / "ev.tsv"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "parallelism,precision_at_10");
  EXPECT_EQ(count_lines(r.out), 3u) << r.out;
}

TEST(Cli, UnknownFlagFailsWithUsage) {
  const auto r = run(kCli + " eval run --bogus 3");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("--bogus"), std::string::npos);
  EXPECT_NE(r.out.find("Usage"), std::string::npos) << r.out;
}

TEST(Cli, ConfigFileSuppliesFlags) {
  TempDir dir;
  ASSERT_EQ(run(kCli + " gen --users 100 --items 50 --out " + (dir / "ev.tsv")).status, 0);
  {
    std::ofstream cfg(dir / "cfg.toml");
    cfg << "k = 3\nepochs = 1\nsizes = [50, 200]\n";
  }
  const auto r = run(kCli + " eval sweep-batch --config " + (dir / "cfg.toml") + " --events " + (dir / "ev.tsv"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("\n50,"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("\n200,"), std::string::npos) << r.out;
}

TEST(Cli, ArticleLinesRoundTrip) {
  std::vector<ArticleDocument> docs{{"a1", "sport", "ann", "Title \"quoted\"", "line\nbreak"},
                                    {"a2", "", "", "", ""}};
  std::stringstream buf;
  write_articles(buf, docs);
  EXPECT_EQ(read_articles(buf), docs);
  std::istringstream bad("{\"item_id\":\"x\"}\nnot json\n");
  try {
    read_articles(bad);
    FAIL() << "expected a parse error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Cli, RecommendAgainstRunningServer) {
  TempDir dir;
  ASSERT_EQ(run(kCli + " gen --users 100 --items 80 --seed 5 --out " + (dir / "ev.tsv") + " --articles " +
                (dir / "art.jsonl"))
                .status,
            0);
  const auto ingest = run(kCli + " ingest --no-content --k 4 --epochs 2 --store " + (dir / "store") +
                          " --events " + (dir / "ev.tsv") + " --articles " + (dir / "art.jsonl"));
  ASSERT_EQ(ingest.status, 0) << ingest.out;

  const int port = free_port();
  const pid_t pid = ::fork();
  if (pid == 0) {
    const auto store = dir / "store";
    const auto port_text = std::to_string(port);
    ::execl(kCli.c_str(), kCli.c_str(), "serve", "--no-content", "--k", "4", "--store", store.c_str(),
            "--host", "127.0.0.1", "--port", port_text.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  Result r;
  for (int attempt = 0; attempt < 100; ++attempt) {
    r = run(kCli + " recommend --port " + std::to_string(port) + " --user u00001 --n 10");
    if (r.status == 0) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  ASSERT_EQ(r.status, 0) << r.out;
  std::istringstream lines(r.out);
  std::string line;
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos) << line;
    EXPECT_EQ(line[0], 'i');
    std::stod(line.substr(tab + 1));
    ++rows;
  }
  EXPECT_EQ(rows, 10);
  EXPECT_TRUE(WIFEXITED(status) && WEXITSTATUS(status) == 0) << status;
}

}  // namespace
}  // namespace rtrec
