#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "batchconf/cli.hpp"
#include "batchconf/pvalues.hpp"
#include "batchconf/testing.hpp"

using namespace batchconf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run Cli(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = RunCli(args, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("batchconf_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }

  std::string Write(const std::string& name, const std::string& text) const {
    const auto p = path_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string Column(const std::string& name, const std::vector<double>& values) const {
    std::ostringstream text;
    text.precision(17);
    text << "value\n";
    for (double v : values) text << v << "\n";
    return Write(name, text.str());
  }
  std::string Path(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
  ~ScopedEnv() { ::unsetenv(name_); }

 private:
  const char* name_;
};

std::vector<double> Normal(std::mt19937_64& rng, std::size_t count, double shift) {
  std::normal_distribution<double> z(shift, 1.0);
  std::vector<double> v(count);
  for (double& x : v) x = z(rng);
  return v;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("pvalue batch reproduces the library") {
  TempDir dir;
  const auto ref = dir.Column("ref.csv", {0.1, 0.4, 0.35, 0.8, 0.55});
  const auto cmp = dir.Column("cmp.csv", {0.9, 0.6, 0.7});
  const auto r = Cli({"pvalue", "batch", "--ref", ref, "--cmp", cmp, "--eta", "2"});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["method"] == "batch");
  CHECK(doc["group_id"] == "cmp");
  CHECK(doc["eta_used"] == json::array({2}));
  const std::vector<double> sorted{0.1, 0.35, 0.4, 0.55, 0.8};
  const std::vector<double> c{0.9, 0.6, 0.7};
  CHECK(doc["p"].get<double>() == BatchConformalPValue(sorted, c, 2).p);

  const auto q = Cli({"pvalue", "batch", "--ref", ref, "--cmp", cmp, "--q", "0.5"});
  CHECK(json::parse(q.out)["eta_used"] == json::array({2}));
}

TEST_CASE("pvalue methods produce one JSON line each") {
  TempDir dir;
  std::mt19937_64 rng(1);
  const auto ref = dir.Column("ref.csv", Normal(rng, 40, 0.0));
  const auto cmp = dir.Column("grp.csv", Normal(rng, 12, 0.5));
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"multiquantile", "--q", "0.25", "--q2", "0.75"},
           {"subsample", "--seed", "3"},
           {"permutation", "--L", "99", "--seed", "3", "--statistic", "quantile-diff", "--tau", "0.5"},
           {"ranksum", "--mode", "normal"},
           {"ztest", "--sigma", "1"},
           {"ttest"}}) {
    std::vector<std::string> full{"pvalue"};
    full.insert(full.end(), args.begin(), args.end());
    full.insert(full.end(), {"--ref", ref, "--cmp", cmp});
    const auto r = Cli(full);
    CAPTURE(args.front());
    REQUIRE(r.code == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
    const auto doc = json::parse(r.out);
    CHECK(doc["p"].get<double>() > 0.0);
    CHECK(doc["p"].get<double>() <= 1.0);
    CHECK(doc["group_id"] == "grp");
  }
}

TEST_CASE("permutation p-values are reproducible from the seed") {
  TempDir dir;
  std::mt19937_64 rng(2);
  const auto ref = dir.Column("ref.csv", Normal(rng, 30, 0.0));
  const auto cmp = dir.Column("cmp.csv", Normal(rng, 10, 0.3));
  const std::vector<std::string> args{"pvalue", "permutation", "--ref", ref, "--cmp", cmp, "--L", "199", "--seed", "8"};
  CHECK(Cli(args).out == Cli(args).out);
}

TEST_CASE("pvalue argument errors") {
  TempDir dir;
  const auto ref = dir.Column("ref.csv", {1, 2, 3});
  const auto cmp = dir.Column("cmp.csv", {4});
  CHECK(Cli({"pvalue", "ranksum", "--ref", ref, "--cmp", cmp, "--eta", "1"}).code == kExitConfig);
  CHECK(Cli({"pvalue", "ztest", "--ref", ref, "--cmp", cmp}).code == kExitConfig);
  CHECK(Cli({"pvalue", "batch", "--ref", ref, "--cmp", cmp, "--eta", "1", "--q", "0.5"}).code == kExitConfig);
  CHECK(Cli({"pvalue", "batch", "--ref", ref, "--cmp", cmp, "--eta", "5"}).code == kExitConfig);
  CHECK(Cli({"pvalue", "nonsense", "--ref", ref, "--cmp", cmp}).code == kExitConfig);
  CHECK(Cli({"pvalue", "batch", "--ref", ref}).code == kExitConfig);
  CHECK(Cli({"frobnicate"}).code == kExitConfig);

  const auto missing = Cli({"pvalue", "batch", "--ref", dir.Path("absent.csv"), "--cmp", cmp});
  CHECK(missing.code == kExitIo);
  CHECK_FALSE(missing.err.empty());
  const auto bad = dir.Write("bad.csv", "value\n1\nabc\n");
  const auto r = Cli({"pvalue", "batch", "--ref", bad, "--cmp", cmp});
  CHECK(r.code == kExitIo);
  CHECK(r.err.find(":3:") != std::string::npos);

  const auto tied = dir.Column("tied.csv", {3});
  CHECK(Cli({"pvalue", "batch", "--ref", ref, "--cmp", tied}).code == kExitConfig);
  CHECK(Cli({"pvalue", "batch", "--ref", ref, "--cmp", tied, "--tie-policy", "uniform-rank"}).code == 0);
}

TEST_CASE("help exits cleanly") {
  const auto r = Cli({"--help"});
  CHECK(r.code == 0);
  CHECK(r.out.find("detect") != std::string::npos);
  CHECK(Cli({"--version"}).code == 0);
}

TEST_CASE("detect matches the library and round-trips through JSON") {
  TempDir dir;
  std::mt19937_64 rng(3);
  const auto ref_values = Normal(rng, 80, 0.0);
  const auto a_values = Normal(rng, 15, 2.5);
  const auto b_values = Normal(rng, 20, 0.0);
  const auto ref = dir.Column("reference.csv", ref_values);
  const auto a = dir.Column("alpha_site.csv", a_values);
  const auto b = dir.Column("beta_site.csv", b_values);
  const auto r = Cli({"detect", "--reference", ref, "--group", a, "--group", b, "--tie-policy", "none",
                      "--alpha", "0.2", "--score", "identity"});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  auto sorted = ref_values;
  std::sort(sorted.begin(), sorted.end());
  const auto& pv = doc["pvalues"];
  REQUIRE(pv.size() == 2);
  CHECK(pv[0]["group_id"] == "alpha_site");
  CHECK(pv[0]["n"] == 15);
  CHECK(pv[0]["p"].get<double>() == BatchConformalPValue(sorted, a_values, 8).p);
  CHECK(pv[1]["p"].get<double>() == BatchConformalPValue(sorted, b_values, 10).p);

  const std::vector<double> ps{pv[0]["p"].get<double>(), pv[1]["p"].get<double>()};
  const auto bh = BenjaminiHochberg(ps, 0.2);
  CHECK(doc["bh"]["k_star"] == bh.k_star);
  CHECK(doc["bh"]["threshold"].get<double>() == bh.threshold);
  CHECK(doc["bh"]["rejected"][0] == "alpha_site");
  CHECK(doc["config"]["quantile_rule"]["kind"] == "q-ceil");
  CHECK(doc["config"]["reference_size"] == 80);
  CHECK(doc["version"] == std::string(Version()));
  CHECK(json::parse(doc.dump()) == doc);
}

TEST_CASE("long-format input gives the same report as per-group files") {
  TempDir dir;
  std::mt19937_64 rng(4);
  const auto ref_values = Normal(rng, 50, 0.0);
  const auto g1 = Normal(rng, 10, 1.0);
  const auto g2 = Normal(rng, 12, 0.0);
  std::ostringstream long_csv;
  long_csv.precision(17);
  long_csv << "group,value\n";
  for (double v : ref_values) long_csv << "reference," << v << "\n";
  for (double v : g1) long_csv << "g1," << v << "\n";
  for (double v : g2) long_csv << "g2," << v << "\n";
  const auto input = dir.Write("all.csv", long_csv.str());
  const auto by_file = Cli({"detect", "--reference", dir.Column("reference.csv", ref_values), "--group",
                            dir.Column("g1.csv", g1), "--group", dir.Column("g2.csv", g2), "--seed", "5"});
  const auto by_label = Cli({"detect", "--input", input, "--seed", "5"});
  REQUIRE(by_file.code == 0);
  REQUIRE(by_label.code == 0);
  const auto a = json::parse(by_file.out);
  const auto b = json::parse(by_label.out);
  CHECK(a["pvalues"] == b["pvalues"]);
  CHECK(a["bh"] == b["bh"]);

  CHECK(Cli({"detect", "--input", input, "--reference-group", "control"}).code == kExitConfig);
}

TEST_CASE("clinical-style fixture flags the planted site") {
  // Covariates age and dose drive the outcome; site_c has an extra effect.
  TempDir dir;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  const auto rows = [&](int count, double effect) {
    std::ostringstream csv;
    csv.precision(12);
    csv << "age,dose,value\n";
    for (int i = 0; i < count; ++i) {
      const double age = 50.0 + 8.0 * z(rng);
      const double dose = std::abs(z(rng));
      csv << age << "," << dose << "," << 0.1 * age + dose + 0.5 * z(rng) + effect << "\n";
    }
    return csv.str();
  };
  const auto ref = dir.Write("reference.csv", rows(300, 0.0));
  const auto a = dir.Write("site_a.csv", rows(25, 0.0));
  const auto b = dir.Write("site_b.csv", rows(25, 0.0));
  const auto c = dir.Write("site_c.csv", rows(25, 3.0));
  const auto r = Cli({"detect", "--reference", ref, "--group", a, "--group", b, "--group", c, "--features", "age,dose",
                      "--score", "abs-residual", "--alpha", "0.2", "--seed", "11", "--quantile-value", "0.5"});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  const auto& rejected = doc["bh"]["rejected"];
  CHECK(std::find(rejected.begin(), rejected.end(), json("site_c")) != rejected.end());
  CHECK(doc["config"]["reference_size"] == 150);
}

TEST_CASE("empirical-cdf scores use each group's control arm") {
  TempDir dir;
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0.0, 1.0);
  const auto arms = [&](double lift) {
    std::ostringstream csv;
    csv.precision(12);
    csv << "arm,value\n";
    for (int i = 0; i < 40; ++i) csv << "control," << z(rng) << "\n";
    for (int i = 0; i < 20; ++i) csv << "treated," << z(rng) + lift << "\n";
    return csv.str();
  };
  const auto ref = dir.Write("reference.csv", arms(0.0));
  const auto g = dir.Write("trial.csv", arms(2.0));
  const auto r = Cli({"detect", "--reference", ref, "--group", g, "--score", "empirical-cdf", "--arm-column", "arm"});
  REQUIRE(r.code == 0);
  const auto doc = json::parse(r.out);
  CHECK(doc["pvalues"][0]["n"] == 20);
  CHECK(doc["config"]["reference_size"] == 20);
  CHECK(Cli({"detect", "--reference", ref, "--group", g, "--score", "empirical-cdf"}).code == kExitConfig);
}

TEST_CASE("detect argument errors") {
  TempDir dir;
  const auto ref = dir.Column("ref.csv", {1, 2, 3, 4});
  const auto g = dir.Column("g.csv", {5, 6});
  CHECK(Cli({"detect", "--reference", ref}).code == kExitConfig);
  CHECK(Cli({"detect", "--reference", ref, "--group", g, "--alpha", "1.5"}).code == kExitConfig);
  CHECK(Cli({"detect", "--reference", ref, "--group", g, "--score", "forest"}).code == kExitConfig);
  CHECK(Cli({"detect", "--reference", ref, "--group", g, "--quantile-rule", "median"}).code == kExitConfig);
  CHECK(Cli({"detect", "--reference", ref, "--group", g, "--outcome", "missing"}).code == kExitIo);
  CHECK(Cli({"detect", "--reference", ref, "--group", g, "--group", g}).code == kExitConfig);
  CHECK(Cli({"detect", "--reference", dir.Path("nope.csv"), "--group", g}).code == kExitIo);
}

TEST_CASE("seed comes from the environment unless given on the command line") {
  TempDir dir;
  const auto ref = dir.Column("ref.csv", {1, 1, 2, 3, 5, 8, 13});
  const auto g = dir.Column("g.csv", {2, 4, 13});
  {
    ScopedEnv env(kSeedEnv, "1234");
    const auto doc = json::parse(Cli({"detect", "--reference", ref, "--group", g}).out);
    CHECK(doc["config"]["seed"] == 1234);
    const auto over = json::parse(Cli({"detect", "--reference", ref, "--group", g, "--seed", "7"}).out);
    CHECK(over["config"]["seed"] == 7);
  }
  {
    ScopedEnv env(kSeedEnv, "not-a-number");
    CHECK(Cli({"detect", "--reference", ref, "--group", g}).code == kExitConfig);
  }
  const auto doc = json::parse(Cli({"detect", "--reference", ref, "--group", g}).out);
  CHECK(doc["config"]["seed"] == 1);
}

TEST_CASE("simulate writes the same CSV for any worker count") {
  TempDir dir;
  const auto scenario = dir.Write("s.json", R"({"name": "cli", "n": 40, "K": 6, "replicates": 6, "seed": 3,
    "group_size": {"rule": "fixed", "size": 10}, "alpha": [0.1], "methods": ["batch", "ranksum"]})");
  const auto one = Cli({"simulate", scenario, "--workers", "1"});
  const auto three = Cli({"simulate", scenario, "--workers", "3"});
  REQUIRE(one.code == 0);
  CHECK(one.out == three.out);
  CHECK(one.out.rfind("scenario,method,alpha", 0) == 0);

  const auto out_path = dir.Path("out.csv");
  CHECK(Cli({"simulate", scenario, "--output", out_path}).code == 0);
  std::ifstream file(out_path);
  std::stringstream text;
  text << file.rdbuf();
  CHECK(text.str() == one.out);

  const auto reseeded = Cli({"simulate", scenario, "--seed", "4"});
  CHECK(reseeded.out != one.out);

  const auto single = Cli({"simulate", scenario, "--replicates", "1"});
  REQUIRE(single.code == 0);
  CHECK(single.out.find("single replicate") != std::string::npos);
}

TEST_CASE("simulate rejects bad scenarios") {
  TempDir dir;
  CHECK(Cli({"simulate", dir.Write("bad.json", R"({"methods": ["nope"]})")}).code == kExitConfig);
  CHECK(Cli({"simulate", dir.Write("broken.json", "{")}).code == kExitConfig);
  CHECK(Cli({"simulate", dir.Path("missing.json")}).code == kExitIo);
  CHECK(Cli({"simulate", dir.Write("ok.json", R"({"methods": ["batch"]})"), "--workers", "0"}).code == kExitConfig);
}

}  // TEST_SUITE
