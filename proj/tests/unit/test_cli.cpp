#include <boost/asio.hpp>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "support.hpp"
#include "vtla/cli.hpp"
#include "vtla/eval.hpp"
#include "vtla/policy.hpp"
#include "vtla/preference.hpp"
#include "vtla/wire.hpp"

using namespace vtla;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result vtla_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Relative path -> contents for every regular file below `root`.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

nlohmann::json last_json_line(const std::string& out) {
  std::istringstream is(out);
  std::string line, last;
  while (std::getline(is, line))
    if (!line.empty()) last = line;
  return nlohmann::json::parse(last);
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (const char* old = std::getenv(name)) old_ = old;
    ::setenv(name, value, 1);
  }
  ~ScopedEnv() {
    if (old_) {
      ::setenv(name_, old_->c_str(), 1);
    } else {
      ::unsetenv(name_);
    }
  }

 private:
  const char* name_;
  std::optional<std::string> old_;
};

std::uint16_t free_port() {
  boost::asio::io_context io;
  boost::asio::ip::tcp::acceptor a(io, {boost::asio::ip::make_address("127.0.0.1"), 0});
  return a.local_endpoint().port();
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 2") {
    CHECK(vtla_run({}).code == cli::kExitUsage);
    const Result unknown = vtla_run({"frobnicate"});
    CHECK(unknown.code == cli::kExitUsage);
    CHECK_FALSE(unknown.err.empty());
    CHECK(vtla_run({"gen-data", "--out", "x", "--bogus"}).code == cli::kExitUsage);
    CHECK(vtla_run({"gen-data", "--out", "x", "--preset", "huge"}).code == cli::kExitUsage);
    CHECK(vtla_run({"eval-insert", "--policy", "oracle", "--trials", "0"}).code == cli::kExitUsage);
    CHECK(vtla_run({"eval-insert", "--policy", "telepathy"}).code == cli::kExitUsage);
    CHECK(vtla_run({"serve-policy", "--listen", "127.0.0.1:0"}).code == cli::kExitUsage);
    CHECK(vtla_run({"gen-data", "--out", "x", "--shapes", "square"}).code == cli::kExitUsage);
  }

  TEST_CASE("help exits cleanly") {
    const Result r = vtla_run({"--help"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("eval-insert") != std::string::npos);
  }

  TEST_CASE("domain errors exit with 1") {
    testing::TempDir d("cli-domain");
    std::ofstream(d.path() / "junk.ckpt") << "not a checkpoint";
    const Result r = vtla_run({"eval-insert", "--policy", "checkpoint:" + (d.path() / "junk.ckpt").string(),
                               "--grid", "square@2.0", "--trials", "1"});
    CHECK(r.code == cli::kExitDomainError);
    CHECK(r.err.find("error") != std::string::npos);
  }

  TEST_CASE("a malformed seed in the environment is a usage error") {
    ScopedEnv env("VTLA_SEED", "seven");
    CHECK(vtla_run({"eval-insert", "--policy", "oracle", "--grid", "square@2.0", "--trials", "1"}).code ==
          cli::kExitUsage);
  }

  TEST_CASE("the environment supplies the default seed") {
    Result a, b;
    {
      ScopedEnv env("VTLA_SEED", "41");
      a = vtla_run({"eval-insert", "--policy", "random", "--grid", "square@2.0", "--trials", "2", "--json"});
    }
    b = vtla_run({"eval-insert", "--policy", "random", "--grid", "square@2.0", "--trials", "2", "--json",
                  "--seed", "41"});
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    const auto ja = last_json_line(a.out)["reports"][0];
    CHECK(ja["seed"] == 41);
    CHECK(ja["cells"] == last_json_line(b.out)["reports"][0]["cells"]);
  }

  TEST_CASE("oracle insertion table is perfect") {
    const Result r = vtla_run({"eval-insert", "--policy", "oracle", "--grid", "shapes", "--trials", "2",
                               "--format", "markdown"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("Suc | Step") != std::string::npos);
    CHECK(r.out.find("| 100% | 1.00 |") != std::string::npos);
  }

  TEST_CASE("generation is byte-identical across runs and worker counts") {
    testing::TempDir a("cli-gen-a"), b("cli-gen-b");
    const std::vector<std::string> base{"gen-data", "--count", "6", "--shapes", "square,round", "--seed", "3"};
    auto args_a = base;
    args_a.insert(args_a.end(), {"--out", a.path().string(), "--workers", "1", "--json"});
    auto args_b = base;
    args_b.insert(args_b.end(), {"--out", b.path().string(), "--workers", "3", "--json"});
    const Result ra = vtla_run(args_a);
    const Result rb = vtla_run(args_b);
    REQUIRE(ra.code == 0);
    REQUIRE(rb.code == 0);
    CHECK(last_json_line(ra.out)["samples"] == 6);
    const auto ta = tree(a.path());
    const auto tb = tree(b.path());
    CHECK(ta.size() == 6 * 3 + 2);
    // meta.json records the output path, which differs.
    for (const auto& [k, v] : ta) {
      if (k == "meta.json") continue;
      REQUIRE(tb.count(k) == 1);
      CHECK_MESSAGE(tb.at(k) == v, k);
    }
    const auto meta = nlohmann::json::parse(ta.at("meta.json"));
    CHECK(meta["run_config"]["command"] == "gen-data");
    CHECK(meta["run_config"]["seed"] == 3);
  }

  TEST_CASE("the full pipeline runs end to end") {
    testing::TempDir d("cli-pipe");
    const fs::path data = d.path() / "data";
    const fs::path ckpt = d.path() / "sft.ckpt";
    const fs::path prefs = d.path() / "prefs.jsonl";
    const fs::path dpo = d.path() / "dpo.ckpt";
    const fs::path rep1 = d.path() / "dataset.json";
    const fs::path rep2 = d.path() / "insert.json";

    REQUIRE(vtla_run({"gen-data", "--out", data.string(), "--count", "24", "--shapes",
                      "square,triangle,pentagon", "--seed", "5", "--json"})
                .code == 0);
    const std::string manifest = (data / "manifest.jsonl").string();

    const Result sft = vtla_run({"sft-train", "--manifest", manifest, "--out", ckpt.string(), "--epochs", "2",
                                 "--batch", "4", "--lr", "0.01", "--hidden1", "4", "--hidden2", "4",
                                 "--curve", (d.path() / "curve.csv").string(), "--json"});
    REQUIRE_MESSAGE(sft.code == 0, sft.err);
    const auto sj = last_json_line(sft.out);
    CHECK(sj.contains("final_loss"));
    nlohmann::json meta;
    const PolicyModel model = load_checkpoint(ckpt, &meta);
    CHECK(model.arch().hidden1 == 4);
    CHECK(meta["run_config"]["command"] == "sft-train");
    CHECK(fs::exists(d.path() / "curve.csv"));

    const Result bp = vtla_run({"build-prefs", "--checkpoint", ckpt.string(), "--manifest", manifest, "--out",
                                prefs.string(), "--draws", "2", "--json"});
    REQUIRE_MESSAGE(bp.code == 0, bp.err);
    const auto bj = last_json_line(bp.out);
    CHECK(bj.contains("dropped_ties"));
    const auto pairs = read_preferences(prefs);
    CHECK(pairs.size() == bj["pairs"].get<std::size_t>());
    for (const auto& p : pairs) CHECK(p.d_chosen < p.d_rejected);
    CHECK(fs::exists(prefs.string() + ".meta.json"));

    if (!pairs.empty()) {
      const Result dt = vtla_run({"dpo-train", "--checkpoint", ckpt.string(), "--manifest", manifest, "--prefs",
                                  prefs.string(), "--out", dpo.string(), "--epochs", "2", "--batch", "2",
                                  "--json"});
      REQUIRE_MESSAGE(dt.code == 0, dt.err);
      CHECK(last_json_line(dt.out).contains("final_accuracy"));
      CHECK(fs::exists(dpo));
    }

    const Result ed = vtla_run({"eval-dataset", "--checkpoint", ckpt.string(), "--manifest", manifest,
                                "--method", "sft", "--format", "json", "--out", rep1.string()});
    REQUIRE_MESSAGE(ed.code == 0, ed.err);
    const Result ei = vtla_run({"eval-insert", "--policy", "checkpoint:" + ckpt.string(), "--grid",
                                "square@2.0", "--trials", "2", "--method", "sft", "--format", "json", "--out",
                                rep2.string()});
    REQUIRE_MESSAGE(ei.code == 0, ei.err);

    const Result rp = vtla_run({"report", "--input", rep1.string(), "--input", rep2.string(), "--format", "markdown"});
    REQUIRE_MESSAGE(rp.code == 0, rp.err);
    CHECK(rp.out.find("| sft |") != std::string::npos);
    CHECK(rp.out.find("GCR") != std::string::npos);
    CHECK(rp.out.find("Suc | Step") != std::string::npos);

    const Result base = vtla_run({"eval-dataset", "--policy", "random", "--manifest", manifest, "--json"});
    REQUIRE(base.code == 0);
    CHECK(last_json_line(base.out).contains("reports"));
  }

  TEST_CASE("serve-policy answers until interrupted") {
    const std::uint16_t port = free_port();
    const std::string addr = "127.0.0.1:" + std::to_string(port);
    std::ostringstream out, err;
    int code = -1;
    std::thread server([&] { code = cli::run({"serve-policy", "--policy", "zero", "--listen", addr}, out, err); });

    std::unique_ptr<wire::RemotePolicy> remote;
    for (int i = 0; i < 100 && !remote; ++i) {
      try {
        remote = std::make_unique<wire::RemotePolicy>(addr);
      } catch (const std::exception&) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    }
    REQUIRE(remote);
    const Observation obs =
        render_observation({2.0, 0, 0}, {ShapeKind::kSquare, 10.0}, 2.0, sample_all(1), 0);
    const Action a = remote->act({obs, ShapeKind::kSquare, std::nullopt});
    CHECK(a.dx == 0.0);
    remote.reset();
    // The signal handler is installed right after the socket starts listening.
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    std::raise(SIGINT);
    server.join();
    CHECK(code == cli::kExitOk);
    std::signal(SIGINT, SIG_DFL);
    std::signal(SIGTERM, SIG_DFL);
  }
}
