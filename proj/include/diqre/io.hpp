#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "diqre/chsh_model.hpp"
#include "diqre/freq_mle.hpp"
#include "diqre/pef_optimizer.hpp"
#include "diqre/protocol_engine.hpp"
#include "diqre/qef_rescaler.hpp"
#include "diqre/quantum_sim.hpp"

namespace diqre::io {

using nlohmann::json;

inline const char* kToolVersion = "diqre 1.0.0";

json load_json(const std::string& path);
// Pretty-printed with a trailing newline; output is byte-stable for equal input.
void save_json(const std::string& path, const json& j);

CountTable read_counts_csv(const std::string& path);
void write_counts_csv(const std::string& path, const CountTable& counts);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

// {tool, inputs: {path: sha256}, parameters}
json provenance(const std::map<std::string, std::string>& input_paths, const json& parameters);

json to_json(const ConditionalBehavior& b);
ConditionalBehavior behavior_from_json(const json& j);

json to_json(const InputDistribution& mu);
InputDistribution input_from_json(const json& j);

json to_json(const JointDistribution& nu);
JointDistribution joint_from_json(const json& j, double marginal_tol = 1e-12);

// Values and alpha stored as decimal strings so that no digits are lost.
json to_json(const EstimationFactor& F);
EstimationFactor factor_from_json(const json& j);

json to_json(const DeviceModel& m);
DeviceModel device_from_json(const json& j);

json to_json(const ProtocolPlan& p);
ProtocolPlan plan_from_json(const json& j);

// Output bits are not included; they go to a separate raw file.
json to_json(const ExpansionTranscript& t);
json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const json& j);

json to_json(const EntropyCertificate& c);
EntropyCertificate certificate_from_json(const json& j);

json to_json(const GridCertificate& g);
GridCertificate grid_from_json(const json& j);

}  // namespace diqre::io
