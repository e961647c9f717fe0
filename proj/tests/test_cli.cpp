#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "diqre/extractor.hpp"
#include "diqre/io.hpp"
#include "diqre/pef_optimizer.hpp"
#include "diqre/protocol_engine.hpp"

namespace fs = std::filesystem;
using namespace diqre;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const std::string& args) {
    const std::string cmd = std::string(DIQRE_CLI_PATH) + " " + args + " 2>&1";
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    while (std::fgets(buf, sizeof buf, p)) r.out += buf;
    const int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("diqre_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

const std::string kData = DIQRE_DATA_DIR;

}  // namespace

TEST_CASE("simulate") {
    TempDir d;
    CHECK(cli("simulate --trials 0 --out-dir " + d.path.string()).code == 2);
    CHECK(cli("simulate --out-dir " + d.path.string()).code == 2);

    const std::string calib = " --calibrate-to " + kData + "/training_distribution.json";
    const auto a = cli("simulate --trials 200000 --seed 9 --q 0.25" + calib + " --out-dir " + d / "a");
    const auto b = cli("simulate --trials 200000 --seed 9 --q 0.25" + calib + " --out-dir " + d / "b");
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(io::sha256_file(d / "a/counts.csv") == io::sha256_file(d / "b/counts.csv"));

    const auto t = io::read_counts_csv(d / "a/counts.csv");
    std::uint64_t total = 0;
    for (auto c : t.counts) total += c;
    CHECK(total == 200000);
    const auto p = io::behavior_from_json(io::load_json(d / "a/behavior.json"));
    CHECK(p.at(0, 0, 0, 0) == doctest::Approx(0.972).epsilon(2e-3));

    // sampled frequency of (00|00) within 5 standard errors of the model
    double row = 0;
    for (int c = 0; c < 4; ++c) row += static_cast<double>(t.counts[c * 4]);
    const double f = static_cast<double>(t.counts[0]) / row;
    CHECK(std::abs(f - p.at(0, 0, 0, 0)) <= 5 * std::sqrt(p.at(0, 0, 0, 0) * (1 - p.at(0, 0, 0, 0)) / row));
}

TEST_CASE("full-scale dry run") {
    const auto r = cli("report --paper-dry-run");
    REQUIRE(r.code == 0);
    MESSAGE(r.out);
    CHECK(r.out.find("4.39") != std::string::npos);
    CHECK(r.out.find("5.48e+08") != std::string::npos);
    CHECK(r.out.find("1.08") != std::string::npos);
    CHECK(r.out.find("4.66e-10") != std::string::npos);
}

TEST_CASE("train and plan from the published distribution") {
    TempDir d;
    const std::string joint = kData + "/training_distribution.json";
    const auto tr = cli("train --joint " + joint + " --pef " + kData +
                        "/reference_pef.json --rescale-bound 1.00000000112 --out-dir " + d.path.string());
    REQUIRE(tr.code == 0);
    const auto rep = io::load_json(d / "train_report.json");
    CHECK(std::abs(rep.at("qef_rate").get<double>() - 0.00289) <= 5e-5);
    CHECK(rep.contains("provenance"));

    const auto pl = cli("plan --qef " + d / "qef.json" + " --joint " + joint + " --q " + std::to_string(1.0 / 8376) +
                        " --r-nu 0.00289 --k0 8.5e7 --out " + d / "plan.json");
    REQUIRE(pl.code == 0);
    const auto plan = io::plan_from_json(io::load_json(d / "plan.json"));
    CHECK(std::abs(static_cast<double>(plan.N) / 2.35e11 - 1) <= 0.05);

    // rate at or below the input entropy cost cannot be planned
    CHECK(cli("plan --qef " + d / "qef.json" + " --r-nu 0.0015 --out " + d / "bad.json").code == 3);
    CHECK_FALSE(fs::exists(d / "bad.json"));
    CHECK(cli("plan --qef " + d / "qef.json" + " --r-nu 0.00289 --gamma 1.5 --out " + d / "bad.json").code == 2);
    CHECK(cli("plan --qef " + d / "missing.json" + " --r-nu 0.00289").code == 2);
}

TEST_CASE("training on deterministic counts is infeasible") {
    TempDir d;
    std::array<std::uint64_t, 16> counts{};
    // outputs a = b = 0 for every setting
    for (int z = 0; z < 4; ++z) counts[z] = 1000;
    io::write_counts_csv(d / "det.csv", CountTable::from_counts(counts));
    const auto r = cli("train --counts " + d / "det.csv" + " --q 0.01 --alphas 1.001 --rescale-bound 1 --out-dir " +
                       d.path.string());
    CHECK(r.code == 3);
    CHECK_FALSE(fs::exists(d / "qef.json"));

    // no trials at all with x = 1, y = 1
    for (int z = 0; z < 3; ++z) counts[8 + z] = 5;
    counts[3] = 0;
    io::write_counts_csv(d / "holes.csv", CountTable::from_counts(counts));
    CHECK(cli("train --counts " + d / "holes.csv" + " --out-dir " + d.path.string()).code == 2);
}

TEST_CASE("audit of the published factor") {
    const auto r = cli("audit --factor " + kData + "/reference_pef.json");
    CHECK(r.code == 5);
    CHECK(r.out.find("FAIL") != std::string::npos);
    const auto x = cli("audit --extractor-samples 50 --seed 3");
    CHECK(x.code == 0);
    CHECK(x.out.find("0/50 mismatches") != std::string::npos);
}

TEST_CASE("run, extract and report at desk scale") {
    TempDir d;
    const auto nu2 = io::joint_from_json(io::load_json(kData + "/training_distribution.json"), 1e-9);
    const auto mu = spot_checking_input(0.5);
    ProtocolPlan p;
    p.q = 0.5;
    p.alpha = 1.001;
    p.F = optimize_pef(joint_from(nu2.conditional(), mu), HighPrec("1.001"), build_polytope(), {mu}).F;
    p.k = 16;
    p.eps_s = 0.1;
    p.eps_x = 0.01;
    p.gamma = 0.99;
    p.gamma_bar = 0.993;
    p.r_in = 2.0;
    p.N = 4000000;
    p.h = 10000;
    io::save_json(d / "plan.json", io::to_json(p));
    io::save_json(d / "behavior.json", io::to_json(nu2.conditional()));

    const std::string run_args = "run --plan " + d / "plan.json" + " --behavior " + d / "behavior.json" +
                                 " --device-seed 4 --prng-seed 5 --checkpoint-interval 100000 --out-dir ";
    const auto r1 = cli(run_args + d / "r1");
    const auto r2 = cli(run_args + d / "r2");
    MESSAGE(r1.out);
    REQUIRE(r1.code == 0);
    REQUIRE(r2.code == 0);
    CHECK(io::sha256_file(d / "r1/outputs.bin") == io::sha256_file(d / "r2/outputs.bin"));
    CHECK(io::sha256_file(d / "r1/checkpoints.jsonl") == io::sha256_file(d / "r2/checkpoints.jsonl"));
    const auto cert = io::certificate_from_json(io::load_json(d / "r1/certificate.json"));
    CHECK(cert.success);
    CHECK(cert.min_entropy_bound == doctest::Approx(min_entropy_bound(p.h, p.eps_s, p.alpha, p.gamma)));

    const std::string ext = "extract --outputs " + d / "r1/outputs.bin" + " --eps-x 0.01 --seed-prng 7 ";
    const auto e = cli(ext + "--certificate " + d / "r1/certificate.json" + " --out " + d / "x.bin" + " --report " +
                       d / "x.json");
    REQUIRE(e.code == 0);
    const auto out = BitStream::load(d / "x.bin");
    CHECK(out.size() == output_length(cert.min_entropy_bound, 0.01));
    CHECK(io::load_json(d / "x.json").at("output_sha256") == io::sha256_file(d / "x.bin"));
    CHECK(cli(ext + "--certificate " + d / "r1/missing.json").code == 2);

    auto failed = io::load_json(d / "r1/certificate.json");
    failed["success"] = false;
    io::save_json(d / "failed.json", failed);
    const auto refused = cli(ext + "--certificate " + d / "failed.json" + " --out " + d / "y.bin");
    CHECK(refused.code == 4);
    CHECK_FALSE(fs::exists(d / "y.bin"));

    const auto rep = cli("report --transcript " + d / "r1/transcript.json" + " --plan " + d / "plan.json" + " --out " +
                         d / "curve.csv");
    REQUIRE(rep.code == 0);
    std::ifstream curve(d / "curve.csv");
    std::string header, line;
    std::getline(curve, header);
    CHECK(header == "n,consumed,generated,realized_net,expected_net,status");
    int rows = 0;
    while (std::getline(curve, line)) ++rows;
    CHECK(rows >= 1);
}

TEST_CASE("failed run writes no certificate") {
    TempDir d;
    const auto nu2 = io::joint_from_json(io::load_json(kData + "/training_distribution.json"), 1e-9);
    ProtocolPlan p;
    p.q = 0.5;
    p.alpha = 1.001;
    p.F = uniform_factor(1.0, HighPrec("1.001"));
    p.k = 16;
    p.eps_s = 0.1;
    p.eps_x = 0.01;
    p.gamma = 0.99;
    p.gamma_bar = 0.993;
    p.r_in = 2.0;
    p.N = 5000;
    p.h = 100;
    io::save_json(d / "plan.json", io::to_json(p));
    io::save_json(d / "behavior.json", io::to_json(nu2.conditional()));
    const auto r = cli("run --plan " + d / "plan.json" + " --behavior " + d / "behavior.json" + " --prng-seed 3" +
                       " --out-dir " + d.path.string());
    CHECK(r.code == 4);
    CHECK(fs::exists(d / "transcript.json"));
    CHECK_FALSE(fs::exists(d / "certificate.json"));
    CHECK(cli("run --plan " + d / "plan.json" + " --behavior " + d / "behavior.json").code == 2);
    CHECK(cli("run --plan " + d / "plan.json" + " --deterministic 16 --prng-seed 3").code == 2);
}
