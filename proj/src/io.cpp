#include "diqre/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "diqre/errors.hpp"

namespace diqre::io {

namespace {

std::string num_text(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Accepts a JSON number or a decimal string.
double as_double(const json& j, const char* what) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return static_cast<double>(parse_decimal(j.get<std::string>()));
    throw ParameterError(std::string("expected a number for ") + what);
}

HighPrec as_highprec(const json& j, const char* what) {
    if (j.is_string()) return parse_decimal(j.get<std::string>());
    if (j.is_number()) return HighPrec(j.get<double>());
    throw ParameterError(std::string("expected a number for ") + what);
}

const json& field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw ParameterError(std::string("missing field '") + key + "'");
    return j.at(key);
}

Cells cells_from(const json& j) {
    const json& v = field(j, "values");
    if (!v.is_array() || v.size() != 16) throw ParameterError("'values' must hold 16 entries");
    Cells c{};
    for (int i = 0; i < 16; ++i) c[i] = as_double(v[i], "values");
    return c;
}

json cells_to(const Cells& c) {
    json a = json::array();
    for (double v : c) a.push_back(num_text(v));
    return a;
}

void check_convention(const json& j) {
    if (j.contains("index_convention") && j.at("index_convention") != kIndexConvention)
        throw ParameterError("unsupported index convention " + j.at("index_convention").dump());
}

void check_kind(const json& j, const std::string& kind) {
    if (field(j, "kind").get<std::string>() != kind)
        throw ParameterError("expected kind '" + kind + "', found " + j.at("kind").dump());
}

}  // namespace

json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParameterError("cannot read " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ParameterError(path + ": " + e.what());
    }
}

void save_json(const std::string& path, const json& j) {
    std::ofstream f(path);
    if (!f) throw ParameterError("cannot write " + path);
    f << j.dump(2) << '\n';
}

CountTable read_counts_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ParameterError("cannot read " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("a,b,x,y,count", 0) != 0)
        throw ParameterError(path + ": expected header a,b,x,y,count");
    std::array<std::uint64_t, 16> counts{};
    std::array<bool, 16> seen{};
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        int a, b, x, y;
        unsigned long long n;
        if (line.find('-') != std::string::npos ||
            std::sscanf(line.c_str(), "%d,%d,%d,%d,%llu", &a, &b, &x, &y, &n) != 5 || a < 0 || a > 1 || b < 0 ||
            b > 1 || x < 0 || x > 1 || y < 0 || y > 1)
            throw ParameterError(path + ":" + std::to_string(lineno) + ": malformed row");
        const int i = flat_index(a, b, x, y);
        if (seen[i]) throw ParameterError(path + ":" + std::to_string(lineno) + ": duplicate cell");
        seen[i] = true;
        counts[i] = n;
    }
    return CountTable::from_counts(counts);
}

void write_counts_csv(const std::string& path, const CountTable& counts) {
    std::ofstream f(path);
    if (!f) throw ParameterError("cannot write " + path);
    f << "a,b,x,y,count\n";
    for (int i = 0; i < 16; ++i)
        f << (i >> 3) << ',' << ((i >> 2) & 1) << ',' << ((i >> 1) & 1) << ',' << (i & 1) << ',' << counts.counts[i]
          << '\n';
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw NumericError("sha256 failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

std::string sha256_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParameterError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return sha256_hex(ss.str());
}

json provenance(const std::map<std::string, std::string>& input_paths, const json& parameters) {
    json inputs = json::object();
    for (const auto& [name, path] : input_paths) inputs[name] = {{"path", path}, {"sha256", sha256_file(path)}};
    return {{"tool", kToolVersion}, {"inputs", inputs}, {"parameters", parameters}};
}

json to_json(const ConditionalBehavior& b) {
    return {{"kind", "conditional"}, {"index_convention", kIndexConvention}, {"values", cells_to(b.p)}};
}

ConditionalBehavior behavior_from_json(const json& j) {
    check_kind(j, "conditional");
    check_convention(j);
    return ConditionalBehavior::from_cells(cells_from(j), 1e-9);
}

json to_json(const InputDistribution& mu) {
    switch (mu.shape) {
        case InputShape::SpotChecking:
            return {{"shape", "spot_checking"}, {"q", num_text(mu.q)}, {"eps_b", num_text(mu.eps_b)}};
        case InputShape::Product:
            return {{"shape", "product"}, {"q", num_text(mu.q)}};
        case InputShape::General:
            break;
    }
    json m = json::array();
    for (double v : mu.mu) m.push_back(num_text(v));
    return {{"shape", "general"}, {"mu", m}};
}

InputDistribution input_from_json(const json& j) {
    const std::string shape = field(j, "shape").get<std::string>();
    if (shape == "spot_checking") {
        const double eps_b = j.contains("eps_b") ? as_double(j.at("eps_b"), "eps_b") : 0.0;
        return spot_checking_input(as_double(field(j, "q"), "q"), eps_b);
    }
    if (shape == "product") return product_input(as_double(field(j, "q"), "q"));
    if (shape == "general") {
        const json& m = field(j, "mu");
        if (!m.is_array() || m.size() != 4) throw ParameterError("'mu' must hold 4 entries");
        std::array<double, 4> mu{};
        for (int z = 0; z < 4; ++z) mu[z] = as_double(m[z], "mu");
        return general_input(mu);
    }
    throw ParameterError("unknown input shape '" + shape + "'");
}

json to_json(const JointDistribution& nu) {
    return {{"kind", "joint"},
            {"index_convention", kIndexConvention},
            {"values", cells_to(nu.nu)},
            {"input", to_json(nu.input)}};
}

JointDistribution joint_from_json(const json& j, double marginal_tol) {
    check_kind(j, "joint");
    check_convention(j);
    return JointDistribution::from_cells(cells_from(j), input_from_json(field(j, "input")), marginal_tol);
}

json to_json(const EstimationFactor& F) {
    json v = json::array();
    for (const auto& x : F.values) v.push_back(format_decimal(x));
    json j = {{"kind", F.kind == FactorKind::PEF ? "PEF" : "QEF"},
              {"index_convention", kIndexConvention},
              {"alpha", format_decimal(F.alpha)},
              {"values", v}};
    if (F.rescale_bound) j["rescale_bound"] = format_decimal(*F.rescale_bound);
    return j;
}

EstimationFactor factor_from_json(const json& j) {
    check_convention(j);
    EstimationFactor F;
    const std::string kind = field(j, "kind").get<std::string>();
    if (kind == "PEF") F.kind = FactorKind::PEF;
    else if (kind == "QEF") F.kind = FactorKind::QEF;
    else throw ParameterError("factor kind must be PEF or QEF, found '" + kind + "'");
    F.alpha = as_highprec(field(j, "alpha"), "alpha");
    const json& v = field(j, "values");
    if (!v.is_array() || v.size() != 16) throw ParameterError("'values' must hold 16 entries");
    for (int i = 0; i < 16; ++i) F.values[i] = as_highprec(v[i], "values");
    if (j.contains("rescale_bound")) F.rescale_bound = as_highprec(j.at("rescale_bound"), "rescale_bound");
    F.validate();
    return F;
}

json to_json(const DeviceModel& m) {
    return {{"theta_state", m.theta_state}, {"alice_angles", m.alice_angles}, {"bob_angles", m.bob_angles},
            {"eta_A", m.eta_A},             {"eta_B", m.eta_B},               {"p_pair", m.p_pair},
            {"visibility", m.visibility}};
}

DeviceModel device_from_json(const json& j) {
    DeviceModel m = reference_device();
    if (j.contains("theta_state")) m.theta_state = as_double(j.at("theta_state"), "theta_state");
    if (j.contains("alice_angles")) m.alice_angles = j.at("alice_angles").get<std::array<double, 2>>();
    if (j.contains("bob_angles")) m.bob_angles = j.at("bob_angles").get<std::array<double, 2>>();
    if (j.contains("eta_A")) m.eta_A = as_double(j.at("eta_A"), "eta_A");
    if (j.contains("eta_B")) m.eta_B = as_double(j.at("eta_B"), "eta_B");
    if (j.contains("p_pair")) m.p_pair = as_double(j.at("p_pair"), "p_pair");
    if (j.contains("visibility")) m.visibility = as_double(j.at("visibility"), "visibility");
    m.validate();
    return m;
}

json to_json(const ProtocolPlan& p) {
    return {{"kind", "plan"},   {"q", p.q},         {"eps_b", p.eps_b},     {"alpha", p.alpha},
            {"factor", to_json(p.F)},               {"k", p.k},             {"k0", p.k0},
            {"eps_s", p.eps_s}, {"eps_x", p.eps_x}, {"gamma", p.gamma},     {"gamma_bar", p.gamma_bar},
            {"r_in", p.r_in},   {"r_nu", p.r_nu},   {"sigma_nu", p.sigma_nu}, {"N", p.N},
            {"h", p.h}};
}

ProtocolPlan plan_from_json(const json& j) {
    check_kind(j, "plan");
    ProtocolPlan p;
    p.q = as_double(field(j, "q"), "q");
    p.eps_b = as_double(field(j, "eps_b"), "eps_b");
    p.alpha = as_double(field(j, "alpha"), "alpha");
    p.F = factor_from_json(field(j, "factor"));
    p.k = as_double(field(j, "k"), "k");
    p.k0 = as_double(field(j, "k0"), "k0");
    p.eps_s = as_double(field(j, "eps_s"), "eps_s");
    p.eps_x = as_double(field(j, "eps_x"), "eps_x");
    p.gamma = as_double(field(j, "gamma"), "gamma");
    p.gamma_bar = as_double(field(j, "gamma_bar"), "gamma_bar");
    p.r_in = as_double(field(j, "r_in"), "r_in");
    p.r_nu = as_double(field(j, "r_nu"), "r_nu");
    p.sigma_nu = as_double(field(j, "sigma_nu"), "sigma_nu");
    p.N = field(j, "N").get<std::uint64_t>();
    p.h = as_double(field(j, "h"), "h");
    p.validate();
    return p;
}

json to_json(const Checkpoint& c) {
    return {{"n", c.n}, {"log2_G", c.log2_G}, {"spot_count", c.spot_count}, {"inputs_consumed_bits", c.inputs_consumed_bits}};
}

Checkpoint checkpoint_from_json(const json& j) {
    Checkpoint c;
    c.n = field(j, "n").get<std::uint64_t>();
    c.log2_G = field(j, "log2_G").get<double>();
    c.spot_count = field(j, "spot_count").get<std::uint64_t>();
    c.inputs_consumed_bits = field(j, "inputs_consumed_bits").get<std::uint64_t>();
    return c;
}

json to_json(const ExpansionTranscript& t) {
    json cps = json::array();
    for (const auto& c : t.checkpoints) cps.push_back(to_json(c));
    return {{"kind", "transcript"},
            {"n", t.n},
            {"log2_G", t.log2_G},
            {"spot_count", t.spot_count},
            {"check_counts", t.check_counts},
            {"output_bits", t.outputs.size()},
            {"inputs_consumed_bits", t.inputs_consumed_bits},
            {"ledger_accounting", t.ledger_accounting},
            {"success", t.success},
            {"stop_reason", t.stop_reason == StopReason::Threshold ? "THRESHOLD" : "EXHAUSTED"},
            {"checkpoints", cps}};
}

json to_json(const EntropyCertificate& c) {
    return {{"kind", "certificate"}, {"min_entropy_bound", c.min_entropy_bound},
            {"h", c.h},              {"eps_s", c.eps_s},
            {"gamma", c.gamma},      {"alpha", c.alpha},
            {"n_stop", c.n_stop},    {"success", c.success}};
}

EntropyCertificate certificate_from_json(const json& j) {
    check_kind(j, "certificate");
    EntropyCertificate c;
    c.min_entropy_bound = field(j, "min_entropy_bound").get<double>();
    c.h = field(j, "h").get<double>();
    c.eps_s = field(j, "eps_s").get<double>();
    c.gamma = field(j, "gamma").get<double>();
    c.alpha = field(j, "alpha").get<double>();
    c.n_stop = field(j, "n_stop").get<std::uint64_t>();
    c.success = field(j, "success").get<bool>();
    return c;
}

json to_json(const GridCertificate& g) {
    json cells = json::array();
    for (const auto& c : g.cells)
        cells.push_back({c.i1, c.i2, c.w1, c.w2, c.lower, c.upper, c.depth});
    json corners = json::array();
    for (const auto& c : g.corners) corners.push_back({c.i1, c.i2, c.lower, c.upper});
    json hist = json::array();
    for (const auto& [lo, up] : g.history) hist.push_back({lo, up});
    return {{"kind", "grid_certificate"},
            {"lattice_bits", kLatticeBits},
            {"alpha", g.alpha},
            {"global_lower", g.global_lower},
            {"global_upper", g.global_upper},
            {"refinement_depth", g.refinement_depth},
            {"converged", g.converged},
            {"history", hist},
            {"cell_fields", {"i1", "i2", "w1", "w2", "lower", "upper", "depth"}},
            {"cells", cells},
            {"corner_fields", {"i1", "i2", "lower", "upper"}},
            {"corners", corners}};
}

GridCertificate grid_from_json(const json& j) {
    check_kind(j, "grid_certificate");
    if (field(j, "lattice_bits").get<int>() != kLatticeBits) throw ParameterError("grid lattice resolution mismatch");
    GridCertificate g;
    g.alpha = field(j, "alpha").get<double>();
    g.global_lower = field(j, "global_lower").get<double>();
    g.global_upper = field(j, "global_upper").get<double>();
    g.refinement_depth = field(j, "refinement_depth").get<int>();
    g.converged = field(j, "converged").get<bool>();
    for (const auto& h : field(j, "history")) g.history.emplace_back(h.at(0).get<double>(), h.at(1).get<double>());
    for (const auto& c : field(j, "cells")) {
        GridCell cell;
        cell.i1 = c.at(0).get<std::int64_t>();
        cell.i2 = c.at(1).get<std::int64_t>();
        cell.w1 = c.at(2).get<std::int64_t>();
        cell.w2 = c.at(3).get<std::int64_t>();
        cell.lower = c.at(4).get<double>();
        cell.upper = c.at(5).get<double>();
        cell.depth = c.at(6).get<int>();
        g.cells.push_back(cell);
    }
    for (const auto& c : field(j, "corners")) {
        CornerBound cb;
        cb.i1 = c.at(0).get<std::int64_t>();
        cb.i2 = c.at(1).get<std::int64_t>();
        cb.lower = c.at(2).get<double>();
        cb.upper = c.at(3).get<double>();
        g.corners.push_back(cb);
    }
    return g;
}

}  // namespace diqre::io
