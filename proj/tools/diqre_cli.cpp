// diqre: command-line pipeline for spot-checking device-independent randomness expansion.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "diqre/errors.hpp"
#include "diqre/extractor.hpp"
#include "diqre/freq_mle.hpp"
#include "diqre/io.hpp"
#include "diqre/pef_optimizer.hpp"
#include "diqre/protocol_engine.hpp"
#include "diqre/qef_rescaler.hpp"
#include "diqre/quantum_sim.hpp"

namespace fs = std::filesystem;
using namespace diqre;
using io::json;

namespace {

enum Exit { kOk = 0, kParameter = 2, kInfeasible = 3, kProtocol = 4, kAudit = 5 };

constexpr double kPaperQ = 1.0 / 8376.0;

// Thrown by a stage that finished cleanly but must report a non-zero exit code.
struct StageExit {
    int code;
};

std::string out_path(const std::string& dir, const std::string& name) {
    fs::create_directories(dir);
    return (fs::path(dir) / name).string();
}

void with_provenance(json& j, const std::map<std::string, std::string>& inputs, const json& params) {
    j["provenance"] = io::provenance(inputs, params);
}

// ---- simulate ----

struct SimulateArgs {
    std::uint64_t trials = 0;
    std::uint64_t seed = 1;
    double q = kPaperQ;
    std::string device;
    std::string calibrate_to;
    std::string out_dir = ".";
};

void cmd_simulate(const SimulateArgs& a) {
    if (a.trials == 0) throw ParameterError("simulate needs at least one trial");
    DeviceModel model = a.device.empty() ? reference_device() : io::device_from_json(io::load_json(a.device));
    std::map<std::string, std::string> inputs;
    if (!a.device.empty()) inputs["device"] = a.device;
    json calib = nullptr;
    if (!a.calibrate_to.empty()) {
        inputs["calibration_target"] = a.calibrate_to;
        const json tj = io::load_json(a.calibrate_to);
        const ConditionalBehavior target = tj.at("kind") == "joint" ? io::joint_from_json(tj, 1e-9).conditional()
                                                                    : io::behavior_from_json(tj);
        const auto cr = calibrate_device(model, target);
        model = cr.model;
        calib = {{"weighted_residual", cr.weighted_residual}, {"max_abs_error", cr.max_abs_error}};
    }
    const auto behavior = predicted_behavior(model);
    const auto mu = spot_checking_input(a.q);

    std::mt19937_64 rng(a.seed);
    std::array<std::uint64_t, 16> counts{};
    for (std::uint64_t t = 0; t < a.trials; ++t) {
        const double u = uniform01(rng);
        int z = 0;
        double acc = mu.mu[0];
        while (z < 3 && u >= acc) acc += mu.mu[++z];
        const auto o = sample_trial(behavior, z >> 1, z & 1, rng);
        ++counts[flat_index(o.a, o.b, z >> 1, z & 1)];
    }
    const json params = {{"trials", a.trials}, {"seed", a.seed}, {"q", a.q}, {"device", io::to_json(model)}};
    io::write_counts_csv(out_path(a.out_dir, "counts.csv"), CountTable::from_counts(counts));
    json bj = io::to_json(behavior);
    bj["device"] = io::to_json(model);
    if (!calib.is_null()) bj["calibration"] = calib;
    with_provenance(bj, inputs, params);
    io::save_json(out_path(a.out_dir, "behavior.json"), bj);
    std::printf("simulated %llu trials; P(00|00) = %.6f\n", static_cast<unsigned long long>(a.trials),
                behavior.at(0, 0, 0, 0));
}

// ---- train ----

struct TrainArgs {
    std::string counts;
    std::string joint;
    std::string pef;
    double q = kPaperQ;
    double eps_b = 0.002;
    std::vector<std::string> alphas{"1.000001172"};
    double horizon = 0.0;
    std::string rescale_bound;
    double grid_gap = 1e-6;
    int grid_depth = 12;
    double fw_tol = 2e-9;
    bool write_grids = false;
    std::string out_dir = ".";
};

void cmd_train(const TrainArgs& a) {
    std::map<std::string, std::string> inputs;
    JointDistribution nu;
    json params = {{"q", a.q}, {"eps_b", a.eps_b}, {"alphas", a.alphas}, {"horizon", a.horizon},
                   {"grid_gap", a.grid_gap}, {"grid_depth", a.grid_depth}, {"fw_tol", a.fw_tol}};
    const auto mus = build_spot_checking_inputs(a.q, a.eps_b);
    if (!a.joint.empty()) {
        inputs["joint"] = a.joint;
        nu = io::joint_from_json(io::load_json(a.joint), 1e-9);
    } else if (!a.counts.empty()) {
        inputs["counts"] = a.counts;
        const auto p = counts_to_conditional(io::read_counts_csv(a.counts));
        const auto mle = mle_project(p, mus.ideal, 1e-10);
        nu = mle.nu;
        json nj = io::to_json(nu);
        nj["mle"] = {{"objective", mle.objective}, {"dual_bound", mle.dual_bound}, {"kkt_residual", mle.kkt_residual}};
        with_provenance(nj, inputs, params);
        io::save_json(out_path(a.out_dir, "nu.json"), nj);
    } else {
        throw ParameterError("train needs --counts or --joint");
    }
    const double r_in = input_entropy_rate(a.q);
    const auto polytope = build_polytope();
    const std::vector<InputDistribution> constraint_mus{mus.ideal, mus.extremal_low, mus.extremal_high};

    EstimationFactor pef;
    json scan_json = json::array();
    if (!a.pef.empty()) {
        inputs["pef"] = a.pef;
        pef = io::factor_from_json(io::load_json(a.pef));
        if (pef.kind != FactorKind::PEF) throw ParameterError(a.pef + " is not a PEF");
    } else {
        std::vector<HighPrec> alphas;
        for (const auto& s : a.alphas) alphas.push_back(parse_decimal(s));
        AlphaScanOptions so;
        so.r_in = r_in;
        so.horizon = a.horizon;
        const auto scan = scan_alpha(nu, alphas, polytope, constraint_mus, so);
        for (const auto& e : scan.table)
            scan_json.push_back({{"alpha", format_decimal(e.alpha, 20)}, {"rate", e.result.rate},
                                 {"dual_bound", e.result.dual_bound}, {"objective", e.objective}});
        pef = scan.best_entry().result.F;
        json pj = io::to_json(pef);
        pj["rate"] = scan.best_entry().result.rate;
        pj["worst_constraint"] = format_decimal(scan.best_entry().result.report.worst_constraint, 30);
        with_provenance(pj, inputs, params);
        io::save_json(out_path(a.out_dir, "pef.json"), pj);
    }
    const double pef_r = pef_rate(pef, nu);
    if (!(pef_r > r_in))
        throw InfeasiblePlanError("PEF rate " + std::to_string(pef_r) + " does not exceed r_in " + std::to_string(r_in));

    json report = {{"r_in", r_in}, {"pef_rate", pef_r}, {"alpha_scan", scan_json}};
    EstimationFactor qef;
    if (!a.rescale_bound.empty()) {
        qef = qef_from_bound(pef, parse_decimal(a.rescale_bound));
        report["rescale_source"] = "supplied";
    } else {
        GridOptions go;
        double f0 = 0.0;
        normalized_factor(pef, &f0);
        go.target_gap = a.grid_gap / f0;
        go.max_depth = a.grid_depth;
        go.fw.tol = a.fw_tol;
        go.progress = [](int d, std::size_t cells, double lo, double up) {
            std::fprintf(stderr, "grid depth %d: %zu cells, bounds [%.12g, %.12g]\n", d, cells, lo, up);
        };
        const auto res = rescale_to_qef(pef, nu, {mus.extremal_low, mus.extremal_high}, go);
        qef = res.qef;
        report["rescale_source"] = "grid";
        report["f0"] = res.f0;
        report["ftilde_bound"] = res.ftilde_bound;
        json grids = json::array();
        for (int k = 0; k < 2; ++k) {
            const auto& g = res.certificates[k];
            grids.push_back({{"global_lower", g.global_lower}, {"global_upper", g.global_upper},
                             {"depth", g.refinement_depth}, {"converged", g.converged},
                             {"cells", g.cells.size()}, {"corners", g.corners.size()}});
            if (a.write_grids)
                io::save_json(out_path(a.out_dir, k == 0 ? "grid_low.json" : "grid_high.json"), io::to_json(g));
        }
        report["grids"] = grids;
    }
    const double qef_r = pef_rate(qef, nu);
    report["rescale_bound"] = format_decimal(*qef.rescale_bound, 30);
    report["qef_rate"] = qef_r;
    json qj = io::to_json(qef);
    qj["rate"] = qef_r;
    with_provenance(qj, inputs, params);
    io::save_json(out_path(a.out_dir, "qef.json"), qj);
    with_provenance(report, inputs, params);
    io::save_json(out_path(a.out_dir, "train_report.json"), report);
    std::printf("PEF rate %.7f, QEF rate %.7f, r_in %.7f\n", pef_r, qef_r, r_in);
    if (!(qef_r > r_in)) throw InfeasiblePlanError("QEF rate does not exceed r_in");
}

// ---- plan ----

struct PlanArgs {
    std::string qef;
    std::string joint;
    double q = 0.0;  // 0: take from the joint distribution, else 1/8376
    double eps_b = 0.002;
    double r_nu = 0.0;
    double sigma = 0.0;
    double k = 512;
    double k0 = 0;
    double eps_s = 0x1.0p-32;
    double eps_x = 0x1.0p-100;
    double gamma = 0.99;
    double gamma_bar = 0.993;
    std::string out = "plan.json";
};

void cmd_plan(const PlanArgs& a) {
    std::map<std::string, std::string> inputs{{"qef", a.qef}};
    const EstimationFactor F = io::factor_from_json(io::load_json(a.qef));
    double q = a.q;
    double r_nu = a.r_nu, sig = a.sigma;
    if (!a.joint.empty()) {
        inputs["joint"] = a.joint;
        const auto nu = io::joint_from_json(io::load_json(a.joint), 1e-9);
        if (q == 0.0) q = nu.input.q;
        if (r_nu == 0.0) r_nu = pef_rate(F, nu);
        if (sig == 0.0) sig = sigma_nu(F, nu);
    }
    if (q == 0.0) q = kPaperQ;
    if (r_nu == 0.0) throw ParameterError("plan needs --joint or --r-nu");
    AppointmentInputs in;
    in.k = a.k;
    in.k0 = a.k0;
    in.eps_s = a.eps_s;
    in.gamma = a.gamma;
    in.gamma_bar = a.gamma_bar;
    in.r_nu = r_nu;
    in.sigma_nu = sig;
    in.r_in = input_entropy_rate(q);
    in.alpha = F.alpha_double();
    const auto ap = appoint_parameters(in);

    ProtocolPlan p;
    p.q = q;
    p.eps_b = a.eps_b;
    p.alpha = in.alpha;
    p.F = F;
    p.k = a.k;
    p.k0 = a.k0;
    p.eps_s = a.eps_s;
    p.eps_x = a.eps_x;
    p.gamma = a.gamma;
    p.gamma_bar = a.gamma_bar;
    p.r_in = in.r_in;
    p.r_nu = r_nu;
    p.sigma_nu = sig;
    p.N = ap.N;
    p.h = ap.h;
    p.validate();
    json j = io::to_json(p);
    j["success_probability"] = ap.success_probability;
    j["certified_min_entropy"] = min_entropy_bound(p.h, p.eps_s, p.alpha, p.gamma);
    with_provenance(j, inputs, {{"k", a.k}, {"k0", a.k0}, {"eps_s", a.eps_s}, {"eps_x", a.eps_x},
                                {"gamma", a.gamma}, {"gamma_bar", a.gamma_bar}, {"q", q}});
    io::save_json(a.out, j);
    std::printf("N = %llu, h = %.6g bits, r_nu = %.6g, sigma_nu = %.6g, r_in = %.6g\n",
                static_cast<unsigned long long>(p.N), p.h, r_nu, sig, p.r_in);
}

// ---- run ----

struct RunArgs {
    std::string plan;
    std::string behavior;
    int deterministic = -1;
    std::uint64_t device_seed = 1;
    std::string seed_file;
    std::uint64_t prng_seed = 0;
    std::uint64_t checkpoint_interval = 100000;
    std::string out_dir = ".";
};

void cmd_run(const RunArgs& a) {
    std::map<std::string, std::string> inputs{{"plan", a.plan}};
    const ProtocolPlan plan = io::plan_from_json(io::load_json(a.plan));
    std::unique_ptr<TrialDevice> device;
    if (a.deterministic >= 0) {
        if (a.deterministic > 15) throw ParameterError("deterministic strategy index must lie in [0,15]");
        device = std::make_unique<DeterministicDevice>(a.deterministic);
    } else if (!a.behavior.empty()) {
        inputs["behavior"] = a.behavior;
        const json bj = io::load_json(a.behavior);
        const auto b = bj.at("kind") == "joint" ? io::joint_from_json(bj, 1e-9).conditional() : io::behavior_from_json(bj);
        device = std::make_unique<SimulatedDevice>(b, a.device_seed);
    } else {
        throw ParameterError("run needs --behavior or --deterministic");
    }
    std::unique_ptr<BitSource> seed;
    if (!a.seed_file.empty()) {
        inputs["seed"] = a.seed_file;
        seed = std::make_unique<BitStreamSource>(BitStream::load(a.seed_file));
    } else if (a.prng_seed != 0) {
        seed = std::make_unique<PrngBitSource>(a.prng_seed);
    } else {
        throw ParameterError("run needs --seed-file or a nonzero --prng-seed");
    }
    const json params = {{"device_seed", a.device_seed}, {"prng_seed", a.prng_seed},
                         {"deterministic", a.deterministic}, {"checkpoint_interval", a.checkpoint_interval}};

    std::ofstream stream(out_path(a.out_dir, "checkpoints.jsonl"));
    RunOptions opts;
    opts.checkpoint_interval = a.checkpoint_interval;
    opts.on_checkpoint = [&](const Checkpoint& c) { stream << io::to_json(c).dump() << '\n' << std::flush; };

    auto write_transcript = [&](const ExpansionTranscript& t) {
        json tj = io::to_json(t);
        with_provenance(tj, inputs, params);
        io::save_json(out_path(a.out_dir, "transcript.json"), tj);
        t.outputs.save(out_path(a.out_dir, "outputs.bin"));
    };
    ExpansionTranscript t;
    try {
        t = run_expansion(plan, *device, *seed, opts);
    } catch (const SeedUnderflowAbort& e) {
        write_transcript(e.transcript);
        throw;
    }
    write_transcript(t);
    const fs::path cert_path = out_path(a.out_dir, "certificate.json");
    if (!t.success) {
        fs::remove(cert_path);
        std::printf("protocol failed: %llu trials, log2 G / beta = %.6g < h = %.6g\n",
                    static_cast<unsigned long long>(t.n), t.log2_G / plan.beta(), plan.h);
        throw StageExit{kProtocol};
    }
    json cj = io::to_json(certify(t, plan));
    with_provenance(cj, inputs, params);
    io::save_json(cert_path.string(), cj);
    std::printf("success after %llu trials; certified min-entropy %.6g bits\n", static_cast<unsigned long long>(t.n),
                cj.at("min_entropy_bound").get<double>());
}

// ---- extract ----

struct ExtractArgs {
    std::string outputs;
    std::string certificate;
    std::string seed;
    std::uint64_t seed_prng = 0;
    double eps_x = 0x1.0p-100;
    std::uint64_t block_length = 0;
    std::string out = "extracted.bin";
    std::string report = "extract_report.json";
};

void cmd_extract(const ExtractArgs& a) {
    std::map<std::string, std::string> inputs{{"outputs", a.outputs}, {"certificate", a.certificate}};
    const auto cert = io::certificate_from_json(io::load_json(a.certificate));
    const BitStream v = BitStream::load(a.outputs);
    if (!cert.success) throw InvalidStateError("certificate does not record a successful run; refusing to extract");
    const std::uint64_t m = output_length(cert.min_entropy_bound, a.eps_x);
    BitStream seed;
    if (!a.seed.empty()) {
        inputs["seed"] = a.seed;
        seed = BitStream::load(a.seed);
    } else if (a.seed_prng != 0) {
        std::mt19937_64 rng(a.seed_prng);
        seed = BitStream::random(m + v.size() - 1, rng);
    } else {
        throw ParameterError("extract needs --seed or a nonzero --seed-prng");
    }
    ExtractionReport rep;
    const BitStream out = extract(v, cert, a.eps_x, seed, a.block_length, &rep);
    out.save(a.out);
    json rj = {{"n", rep.n},
               {"m", rep.m},
               {"block_length", rep.block_length},
               {"eps_x", rep.eps_x},
               {"eps_s", rep.eps_s},
               {"total_soundness", rep.total_soundness},
               {"output_sha256", io::sha256_file(a.out)}};
    with_provenance(rj, inputs, {{"eps_x", a.eps_x}, {"block_length", a.block_length}, {"seed_prng", a.seed_prng}});
    io::save_json(a.report, rj);
    std::printf("extracted %llu bits from %llu; total soundness %.3g\n", static_cast<unsigned long long>(rep.m),
                static_cast<unsigned long long>(rep.n), rep.total_soundness);
}

// ---- report ----

struct ReportArgs {
    std::string transcript;
    std::string plan;
    std::string out = "curve.csv";
    bool paper_dry_run = false;
    double k0 = 8.50e7;
    double k = 512;
    double r_in = 0.00197;
    double N = 2.35e11;
    double n = 1.80e11;
    double alpha = 1.000001172;
    double eps_s = 0x1.0p-32;
    double eps_x = 0x1.0p-100;
    double gamma = 0.99;
};

void cmd_report(const ReportArgs& a) {
    if (a.paper_dry_run) {
        const double consumed = a.k0 + a.n * a.r_in;
        const double certified = a.k0 + a.k + a.N * a.r_in;
        const double h = threshold(a.k, a.k0, a.N, a.r_in, a.eps_s, a.alpha, a.gamma);
        std::printf("consumed at n=%.3g: %.4g bits\n", a.n, consumed);
        std::printf("certified min-entropy k0+k+N*r_in: %.4g bits\n", certified);
        std::printf("threshold h: %.4g bits\n", h);
        std::printf("net expansion: %.4g bits\n", certified - consumed);
        std::printf("total soundness 2*eps_s+eps_x: %.3g\n", total_soundness(a.eps_s, a.eps_x));
        return;
    }
    if (a.transcript.empty() || a.plan.empty()) throw ParameterError("report needs --transcript and --plan");
    const ProtocolPlan plan = io::plan_from_json(io::load_json(a.plan));
    const json tj = io::load_json(a.transcript);
    ExpansionTranscript t;
    t.n = tj.at("n").get<std::uint64_t>();
    t.log2_G = tj.at("log2_G").get<double>();
    t.success = tj.at("success").get<bool>();
    for (const auto& c : tj.at("checkpoints")) t.checkpoints.push_back(io::checkpoint_from_json(c));
    const auto curve = net_expansion_curve(t, plan);
    std::ofstream f(a.out);
    if (!f) throw ParameterError("cannot write " + a.out);
    f << "n,consumed,generated,realized_net,expected_net,status\n";
    f.precision(17);
    const char* status = t.success ? "ok" : "protocol_fails";
    for (const auto& p : curve)
        f << p.n << ',' << p.consumed << ',' << p.generated << ',' << p.realized << ',' << p.expected << ',' << status
          << '\n';
    std::printf("%zu checkpoints written to %s%s\n", curve.size(), a.out.c_str(),
                t.success ? "" : " (run failed: no certificate, no extraction)");
}

// ---- audit ----

struct AuditArgs {
    std::string factor;
    double q = kPaperQ;
    double eps_b = 0.002;
    double margin_tol = 1e-12;
    std::vector<std::string> grids;
    std::string rescale_factor;
    int extractor_samples = 0;
    std::uint64_t seed = 1;
};

void cmd_audit(const AuditArgs& a) {
    bool ok = true;
    if (!a.factor.empty()) {
        const auto F = io::factor_from_json(io::load_json(a.factor));
        const auto mus = build_spot_checking_inputs(a.q, a.eps_b);
        const auto rep = verify_feasibility(F, build_polytope(), {mus.ideal, mus.extremal_low, mus.extremal_high});
        const bool pass = rep.worst_constraint <= 1 + HighPrec(a.margin_tol);
        std::printf("factor feasibility: worst constraint %s over %zu constraints: %s\n",
                    format_decimal(rep.worst_constraint, 25).c_str(), rep.per_vertex.size(), pass ? "PASS" : "FAIL");
        ok = ok && pass;
    }
    for (const auto& g : a.grids) {
        const auto cert = io::grid_from_json(io::load_json(g));
        const bool pass = audit_grid_certificate(cert);
        std::printf("grid certificate %s: upper %.15g, %zu cells: %s\n", g.c_str(), cert.global_upper,
                    cert.cells.size(), pass ? "PASS" : "FAIL");
        ok = ok && pass;
        if (!a.rescale_factor.empty()) {
            const auto Q = io::factor_from_json(io::load_json(a.rescale_factor));
            HighPrec f0 = 0;
            for (const auto& v : Q.values) f0 += v;
            f0 *= Q.rescale_bound.value_or(HighPrec(1));
            const bool covers = Q.rescale_bound && *Q.rescale_bound >= f0 * HighPrec(cert.global_upper) * (1 - 1e-15);
            std::printf("rescale bound covers grid: %s\n", covers ? "PASS" : "FAIL");
            ok = ok && covers;
        }
    }
    if (a.extractor_samples > 0) {
        std::mt19937_64 rng(a.seed);
        int bad = 0;
        for (int s = 0; s < a.extractor_samples; ++s) {
            const std::uint64_t n = 1 + rng() % 2048, m = 1 + rng() % 256;
            const auto v = BitStream::random(n, rng);
            const auto seed = BitStream::random(m + n - 1, rng);
            const std::uint64_t l = 1 + rng() % n;
            if (!(toeplitz_fft(seed, v, m, l) == toeplitz_naive(seed, v, m))) ++bad;
        }
        std::printf("extractor oracle: %d/%d mismatches: %s\n", bad, a.extractor_samples, bad ? "FAIL" : "PASS");
        ok = ok && bad == 0;
    }
    if (!ok) throw AuditFailure("audit failed");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diqre: spot-checking device-independent randomness expansion"};
    app.set_config("--config", "", "TOML config file; one [section] per subcommand");
    app.require_subcommand(1);

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Sample a counts table from the device model");
    sim->add_option("--trials", sa.trials, "Number of trials")->required();
    sim->add_option("--seed", sa.seed, "Simulation RNG seed");
    sim->add_option("--q", sa.q, "Spot-check probability");
    sim->add_option("--device", sa.device, "Device model JSON");
    sim->add_option("--calibrate-to", sa.calibrate_to, "Fit pair rate and visibility to this behaviour first");
    sim->add_option("--out-dir", sa.out_dir);

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "MLE projection, PEF optimisation and QEF rescaling");
    train->add_option("--counts", ta.counts, "Training counts CSV");
    train->add_option("--joint", ta.joint, "Use this joint distribution instead of fitting counts");
    train->add_option("--pef", ta.pef, "Use this PEF instead of optimising");
    train->add_option("--q", ta.q);
    train->add_option("--eps-b", ta.eps_b, "Relative input bias tolerance");
    train->add_option("--alphas", ta.alphas, "Candidate powers (decimal strings)");
    train->add_option("--horizon", ta.horizon, "Trial horizon for the finite-size alpha penalty");
    train->add_option("--rescale-bound", ta.rescale_bound, "Skip the grid and use this overall rescaling bound");
    train->add_option("--grid-gap", ta.grid_gap, "Target gap on the overall rescaling factor");
    train->add_option("--grid-depth", ta.grid_depth);
    train->add_option("--fw-tol", ta.fw_tol);
    train->add_flag("--write-grids", ta.write_grids, "Write full grid certificates (large)");
    train->add_option("--out-dir", ta.out_dir);

    PlanArgs pa;
    auto* plan = app.add_subcommand("plan", "Appoint N and the threshold h");
    plan->add_option("--qef", pa.qef)->required();
    plan->add_option("--joint", pa.joint, "Expected distribution for r_nu and sigma_nu");
    plan->add_option("--q", pa.q);
    plan->add_option("--eps-b", pa.eps_b);
    plan->add_option("--r-nu", pa.r_nu, "Override the expected rate");
    plan->add_option("--sigma-nu", pa.sigma, "Override the standard deviation");
    plan->add_option("--k", pa.k);
    plan->add_option("--k0", pa.k0);
    plan->add_option("--eps-s", pa.eps_s);
    plan->add_option("--eps-x", pa.eps_x);
    plan->add_option("--gamma", pa.gamma);
    plan->add_option("--gamma-bar", pa.gamma_bar);
    plan->add_option("--out", pa.out);

    RunArgs ra;
    auto* run = app.add_subcommand("run", "Run the expansion protocol against a device");
    run->add_option("--plan", ra.plan)->required();
    run->add_option("--behavior", ra.behavior, "Honest device sampling this behaviour");
    run->add_option("--deterministic", ra.deterministic, "Local deterministic strategy index");
    run->add_option("--device-seed", ra.device_seed);
    run->add_option("--seed-file", ra.seed_file, "Input seed bits");
    run->add_option("--prng-seed", ra.prng_seed, "Pseudorandom input bits (simulation only)");
    run->add_option("--checkpoint-interval", ra.checkpoint_interval);
    run->add_option("--out-dir", ra.out_dir);

    ExtractArgs ea;
    auto* ext = app.add_subcommand("extract", "Toeplitz extraction from a certified run");
    ext->add_option("--outputs", ea.outputs)->required();
    ext->add_option("--certificate", ea.certificate)->required();
    ext->add_option("--seed", ea.seed, "Extractor seed file (m + n - 1 bits)");
    ext->add_option("--seed-prng", ea.seed_prng, "Pseudorandom seed (testing only)");
    ext->add_option("--eps-x", ea.eps_x);
    ext->add_option("--block-length", ea.block_length);
    ext->add_option("--out", ea.out);
    ext->add_option("--report", ea.report);

    ReportArgs pr;
    auto* rep = app.add_subcommand("report", "Net-expansion curve data or the full-scale accounting");
    rep->add_option("--transcript", pr.transcript);
    rep->add_option("--plan", pr.plan);
    rep->add_option("--out", pr.out);
    rep->add_flag("--paper-dry-run", pr.paper_dry_run, "Print the closed-form paper accounting");
    rep->add_option("--k0", pr.k0);
    rep->add_option("--r-in", pr.r_in);
    rep->add_option("--N", pr.N);
    rep->add_option("--n", pr.n);

    AuditArgs aa;
    auto* aud = app.add_subcommand("audit", "Re-verify factors, grid certificates and the extractor");
    aud->add_option("--factor", aa.factor, "PEF or QEF to check against the polytope");
    aud->add_option("--q", aa.q);
    aud->add_option("--eps-b", aa.eps_b);
    aud->add_option("--margin-tol", aa.margin_tol);
    aud->add_option("--grid", aa.grids, "Grid certificate JSON");
    aud->add_option("--qef", aa.rescale_factor, "QEF whose rescale bound must cover the grids");
    aud->add_option("--extractor-samples", aa.extractor_samples);
    aud->add_option("--seed", aa.seed);

    try {
        app.parse(argc, argv);
        if (sim->parsed()) cmd_simulate(sa);
        else if (train->parsed()) cmd_train(ta);
        else if (plan->parsed()) cmd_plan(pa);
        else if (run->parsed()) cmd_run(ra);
        else if (ext->parsed()) cmd_extract(ea);
        else if (rep->parsed()) cmd_report(pr);
        else if (aud->parsed()) cmd_audit(aa);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kParameter;
    } catch (const StageExit& e) {
        return e.code;
    } catch (const ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << '\n';
        return kParameter;
    } catch (const InsufficientDataError& e) {
        std::cerr << "insufficient data: " << e.what() << '\n';
        return kParameter;
    } catch (const InfeasiblePlanError& e) {
        std::cerr << "infeasible: " << e.what() << '\n';
        return kInfeasible;
    } catch (const SeedUnderflowError& e) {
        std::cerr << "protocol aborted: " << e.what() << '\n';
        return kProtocol;
    } catch (const InvalidStateError& e) {
        std::cerr << "refused: " << e.what() << '\n';
        return kProtocol;
    } catch (const AuditFailure& e) {
        std::cerr << e.what() << '\n';
        return kAudit;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return kOk;
}
