#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "kvmt/binio.hpp"
#include "kvmt/metrics.hpp"

namespace {

// Runs the CLI with stdout/stderr captured to files in `dir`; returns the exit code.
int run(const testing::TempDir& dir, const std::string& args) {
  const std::string cmd = std::string(KVMT_CLI_PATH) + " " + args + " >" + (dir / "stdout").string() + " 2>" +
                          (dir / "stderr").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Value of a `name<TAB>value` row in a TSV report.
double row(const std::string& tsv, const std::string& name) {
  std::istringstream in(tsv);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(name + "\t", 0) == 0) return std::stod(line.substr(name.size() + 1));
  FAIL("missing row " << name);
  return 0;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("usage errors exit with 2, runtime errors with 1") {
  testing::TempDir dir("cli_err");
  CHECK(run(dir, "") == 2);
  CHECK(run(dir, "no-such-command") == 2);
  CHECK(run(dir, "make-task --out-dir " + q(dir / "t")) == 2);
  CHECK(run(dir, "make-task --seed notanumber --out-dir " + q(dir / "t")) == 2);
  CHECK(run(dir, "eval-consistency --raw " + q(dir / "missing.kvdr")) == 1);
  CHECK(slurp(dir / "stderr").find("kvmt: error:") != std::string::npos);
  CHECK(run(dir, "gradcheck --seed 0 --report " + q(dir / "gc.tsv")) == 0);
  const std::string gc = slurp(dir / "gc.tsv");
  CHECK(gc.rfind("check\tmax_rel_err\ttolerance\tpassed\n", 0) == 0);
  CHECK(gc.find("\t0\n") == std::string::npos);
}

TEST_CASE("datastore commands") {
  testing::TempDir dir("cli_ds");
  REQUIRE(run(dir, "make-task --seed 1 --out-dir " + q(dir / "task")) == 0);
  REQUIRE(run(dir, "build-datastore --input oracle:" + q(dir / "task") + " --epsilon 0 --dim 16 --raw-out " +
                       q(dir / "zero.kvdr") + " --seed 1") == 0);
  REQUIRE(std::filesystem::exists(dir / "zero.kvdr"));

  SUBCASE("noise-free keys are perfectly consistent") {
    REQUIRE(run(dir, "eval-consistency --raw " + q(dir / "zero.kvdr") + " --k 1 --report " + q(dir / "r.tsv")) == 0);
    const std::string r = slurp(dir / "r.tsv");
    CHECK(row(r, "kv_consistency") == 1.0);
    CHECK(r.find("kv_consistency\t1.000000\n") != std::string::npos);
  }

  SUBCASE("index build is byte-deterministic and searchable") {
    REQUIRE(run(dir, "build-datastore --input oracle:" + q(dir / "task") + " --epsilon 0.3 --dim 16 --raw-out " +
                         q(dir / "a.kvdr") + " --out " + q(dir / "a.kvdi") + " --pq-m 4 --nlist 16 --seed 1") == 0);
    REQUIRE(run(dir, "build-datastore --input " + q(dir / "a.kvdr") + " --out " + q(dir / "b.kvdi") +
                         " --pq-m 4 --nlist 16 --seed 1") == 0);
    CHECK(slurp(dir / "a.kvdi") == slurp(dir / "b.kvdi"));

    REQUIRE(run(dir, "search --index " + q(dir / "a.kvdi") + " --queries " + q(dir / "zero.kvdr") +
                         " --k 3 --nprobe 4 --report " + q(dir / "s.tsv")) == 0);
    const std::string s = slurp(dir / "s.tsv");
    CHECK(s.rfind("query\trank\tid\tvalue\tdistance\n", 0) == 0);
    REQUIRE(run(dir, "search --index " + q(dir / "a.kvdi") + " --queries " + q(dir / "zero.kvdr") +
                         " --k 3 --nprobe 4 --report " + q(dir / "s2.tsv")) == 0);
    CHECK(slurp(dir / "s2.tsv") == s);

    REQUIRE(run(dir, "eval-consistency --index " + q(dir / "a.kvdi") + " --k 4 --nprobe 16 --sample-cap 300 --seed 1"
                         " --queries " + q(dir / "zero.kvdr") + " --report " + q(dir / "c.tsv")) == 0);
    const std::string c = slurp(dir / "c.tsv");
    CHECK(row(c, "entries") > 1000);
    CHECK(row(c, "kv_consistency") > 0.5);
    CHECK(row(c, "retrieval_accuracy") > 0.5);
    // Noise of norm about eps*sqrt(dim) on a unit codeword: cos ~ 1/sqrt(1 + eps^2 dim).
    CHECK(row(c, "qk_consistency") == doctest::Approx(1.0 / std::sqrt(1.0 + 0.09 * 16)).epsilon(0.05));

    CHECK(run(dir, "search --index " + q(dir / "a.kvdi") + " --queries " + q(dir / "zero.kvdr") + " --nprobe 17") == 2);
  }

  SUBCASE("projection and epsilon sweep") {
    REQUIRE(run(dir, "project --vectors " + q(dir / "zero.kvdr") + " --out " + q(dir / "p.tsv")) == 0);
    const kvmt::RawDatastore ds = kvmt::read_raw(dir / "zero.kvdr");
    const std::string p = slurp(dir / "p.tsv");
    CHECK(static_cast<std::size_t>(std::count(p.begin(), p.end(), '\n')) == ds.size());

    REQUIRE(run(dir, "sweep --param epsilon --values 0.05,0.5,2.0 --task-dir " + q(dir / "task") +
                         " --seed 0 --report " + q(dir / "sw.tsv")) == 0);
    std::istringstream in(slurp(dir / "sw.tsv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "epsilon\tkv_consistency\tqk_cos\tretr_acc\ttest_acc");
    std::vector<double> kv;
    while (std::getline(in, line)) {
      std::istringstream f(line);
      std::string param, value;
      std::getline(f, param, '\t');
      std::getline(f, value, '\t');
      kv.push_back(std::stod(value));
    }
    REQUIRE(kv.size() == 3);
    CHECK(kv[0] >= 0.95);
    CHECK(kv[0] > kv[1]);
    CHECK(kv[1] > kv[2]);
    CHECK(kv[2] <= 0.5);
  }
}

TEST_CASE("train, decode and contrastive evaluation") {
  testing::TempDir dir("cli_train");
  REQUIRE(run(dir, "make-task --seed 2 --out-dir " + q(dir / "task")) == 0);
  REQUIRE(run(dir, "build-datastore --input oracle:" + q(dir / "task") + " --epsilon 0.1 --dim 16 --raw-out " +
                       q(dir / "ds.kvdr") + " --seed 2") == 0);

  const std::string base_train = "train --task-dir " + q(dir / "task") + " --mode baseline --align none --dim 16"
                                 " --d-ff 32 --epochs 2 --lr 0.005 --seed 3";
  REQUIRE(run(dir, base_train + " --out " + q(dir / "a.kvck") + " --report " + q(dir / "a.jsonl")) == 0);
  REQUIRE(run(dir, base_train + " --out " + q(dir / "b.kvck") + " --report " + q(dir / "b.jsonl")) == 0);
  CHECK(slurp(dir / "a.kvck") == slurp(dir / "b.kvck"));
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(slurp(dir / "a.jsonl").rfind("{\"epoch\":1,", 0) == 0);

  SUBCASE("kNN with lambda 1 reproduces the baseline report") {
    const std::string dec = "decode --checkpoint " + q(dir / "a.kvck") + " --input " + q(dir / "task" / "test.txt");
    REQUIRE(run(dir, dec + " --report " + q(dir / "base.tsv") + " --output " + q(dir / "base.txt")) == 0);
    REQUIRE(run(dir, dec + " --mode knn --lambda 1 --datastore " + q(dir / "ds.kvdr") + " --report " +
                         q(dir / "knn.tsv") + " --output " + q(dir / "knn.txt")) == 0);
    CHECK(slurp(dir / "base.tsv") == slurp(dir / "knn.tsv"));
    CHECK(slurp(dir / "base.txt") == slurp(dir / "knn.txt"));
    const std::string r = slurp(dir / "base.tsv");
    CHECK(row(r, "sentences") == 200);
    CHECK(row(r, "token_accuracy") > 0.1);
    CHECK(run(dir, dec + " --mode knn") == 2);
  }

  SUBCASE("pred training with an explicit datastore") {
    REQUIRE(run(dir, "train --task-dir " + q(dir / "task") + " --datastore " + q(dir / "ds.kvdr") +
                         " --mode pred --align nca --dim 16 --d-ff 32 --epochs 1 --seed 4 --out " +
                         q(dir / "p.kvck") + " --step-report " + q(dir / "steps.jsonl")) == 0);
    CHECK(slurp(dir / "steps.jsonl").rfind("{\"step\":1,", 0) == 0);
    REQUIRE(run(dir, "contrastive-eval --checkpoint " + q(dir / "p.kvck") + " --items " +
                         q(dir / "task" / "contrastive.jsonl") + " --mode pred --datastore " + q(dir / "ds.kvdr") +
                         " --report " + q(dir / "c.tsv") + " --scores " + q(dir / "scores.tsv")) == 0);
    const std::string c = slurp(dir / "c.tsv");
    CHECK(row(c, "items") == 200);
    const double acc = row(c, "contrastive_accuracy");
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    const std::string sc = slurp(dir / "scores.tsv");
    CHECK(static_cast<std::size_t>(std::count(sc.begin(), sc.end(), '\n')) == 201);
  }

  SUBCASE("a datastore that does not match the corpus is rejected") {
    REQUIRE(run(dir, "make-task --seed 9 --out-dir " + q(dir / "other")) == 0);
    REQUIRE(run(dir, "build-datastore --input oracle:" + q(dir / "other") + " --epsilon 0.1 --dim 16 --raw-out " +
                         q(dir / "other.kvdr") + " --seed 2") == 0);
    CHECK(run(dir, "train --task-dir " + q(dir / "task") + " --datastore " + q(dir / "other.kvdr") +
                       " --dim 16 --epochs 1 --seed 1 --out " + q(dir / "x.kvck")) != 0);
  }
}
