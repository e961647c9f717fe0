#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "diqre/io.hpp"

using namespace diqre;

namespace {

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / ("diqre_io_" + name)).string(); }

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_CASE("counts csv round trip and errors") {
    const auto t = io::read_counts_csv(DIQRE_DATA_DIR "/training_counts.csv");
    CHECK(t.counts[0] == 42212881971ULL);
    const auto p = tmp("counts.csv");
    io::write_counts_csv(p, t);
    CHECK(io::read_counts_csv(p).counts == t.counts);

    write_text(p, "a,b,x,y\n0,0,0,0,1\n");
    CHECK_THROWS_AS(io::read_counts_csv(p), ParameterError);
    write_text(p, "a,b,x,y,count\n0,0,0,0,1\n0,0,0,0,2\n");
    CHECK_THROWS_AS(io::read_counts_csv(p), ParameterError);
    write_text(p, "a,b,x,y,count\n0,2,0,0,1\n");
    CHECK_THROWS_AS(io::read_counts_csv(p), ParameterError);
    write_text(p, "a,b,x,y,count\n0,0,0,0,-4\n");
    CHECK_THROWS_AS(io::read_counts_csv(p), ParameterError);
    write_text(p, "a,b,x,y,count\n");
    CHECK_THROWS_AS(io::read_counts_csv(p), InsufficientDataError);
    std::filesystem::remove(p);
    CHECK_THROWS_AS(io::read_counts_csv(p), ParameterError);
}

TEST_CASE("factor round trip keeps every digit") {
    const auto F = io::factor_from_json(io::load_json(DIQRE_DATA_DIR "/reference_pef.json"));
    const auto G = io::factor_from_json(io::to_json(F));
    CHECK(G.values == F.values);
    CHECK(G.alpha == F.alpha);
    auto Q = qef_from_bound(F, HighPrec("1.00000000112"));
    const auto Q2 = io::factor_from_json(io::to_json(Q));
    CHECK(Q2.kind == FactorKind::QEF);
    CHECK(*Q2.rescale_bound == *Q.rescale_bound);
    // stored with 40 significant digits
    for (int i = 0; i < 16; ++i) CHECK(abs(Q2.values[i] - Q.values[i]) <= HighPrec("1e-39"));

    auto j = io::to_json(F);
    j["index_convention"] = "x*8+y*4+a*2+b";
    CHECK_THROWS_AS(io::factor_from_json(j), ParameterError);
}

TEST_CASE("distribution round trips") {
    const auto nu = io::joint_from_json(io::load_json(DIQRE_DATA_DIR "/training_distribution.json"), 1e-9);
    const auto nu2 = io::joint_from_json(io::to_json(nu), 1e-9);
    CHECK(nu2.nu == nu.nu);
    CHECK(nu2.input.mu == nu.input.mu);

    const auto b = pr_box(2);
    CHECK(io::behavior_from_json(io::to_json(b)).p == b.p);

    for (const auto& mu : {spot_checking_input(0.01, 0.1), product_input(0.2), general_input({0.1, 0.2, 0.3, 0.4})}) {
        const auto back = io::input_from_json(io::to_json(mu));
        CHECK(back.mu == mu.mu);
        CHECK(back.shape == mu.shape);
    }
    auto j = io::to_json(nu);
    j["kind"] = "conditional";
    CHECK_THROWS_AS(io::joint_from_json(j), ParameterError);
}

TEST_CASE("plan, certificate and grid round trips") {
    ProtocolPlan p;
    p.q = 1.0 / 8376;
    p.alpha = 1.000001172;
    p.F = io::factor_from_json(io::load_json(DIQRE_DATA_DIR "/reference_pef.json"));
    p.k = 512;
    p.k0 = 8.5e7;
    p.eps_s = 0x1.0p-32;
    p.eps_x = 0x1.0p-100;
    p.gamma = 0.99;
    p.gamma_bar = 0.993;
    p.r_in = 0.00197;
    p.r_nu = 0.00289;
    p.sigma_nu = 63.3;
    p.N = 235000000000ULL;
    p.h = 6.03e8;
    const auto p2 = io::plan_from_json(io::to_json(p));
    CHECK(p2.N == p.N);
    CHECK(p2.h == p.h);
    CHECK(p2.q == p.q);
    CHECK(p2.eps_x == p.eps_x);
    CHECK(p2.F.values == p.F.values);

    EntropyCertificate c;
    c.min_entropy_bound = 5.48e8;
    c.h = 6.03e8;
    c.eps_s = 0x1.0p-32;
    c.gamma = 0.99;
    c.alpha = 1.000001172;
    c.n_stop = 12345;
    c.success = true;
    const auto c2 = io::certificate_from_json(io::to_json(c));
    CHECK(c2.min_entropy_bound == c.min_entropy_bound);
    CHECK(c2.n_stop == c.n_stop);
    CHECK(c2.success);

    GridCertificate g;
    g.cells.push_back({0, 0, 1LL << 39, 1LL << 39, 0.05, 0.07, 0});
    g.corners.push_back({0, 0, 0.05, 0.06});
    g.global_lower = 0.05;
    g.global_upper = 0.07;
    g.alpha = 1.000001172;
    g.history = {{0.05, 0.07}};
    const auto g2 = io::grid_from_json(io::to_json(g));
    CHECK(g2.cells.size() == 1);
    CHECK(g2.cells[0].w1 == g.cells[0].w1);
    CHECK(g2.corners[0].upper == 0.06);
    CHECK(g2.global_upper == 0.07);
}

TEST_CASE("digests and provenance") {
    CHECK(io::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const auto p = tmp("digest.json");
    io::save_json(p, io::json{{"x", 1}});
    const auto d1 = io::sha256_file(p);
    io::save_json(p, io::json{{"x", 1}});
    CHECK(io::sha256_file(p) == d1);
    const auto prov = io::provenance({{"file", p}}, io::json{{"seed", 3}});
    CHECK(prov["tool"] == io::kToolVersion);
    CHECK(prov["inputs"]["file"]["sha256"] == d1);
    CHECK(prov["parameters"]["seed"] == 3);
    std::filesystem::remove(p);
}
