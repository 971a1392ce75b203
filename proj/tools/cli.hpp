#pragma once

#include "json.hpp"

#include <ostream>
#include <string>
#include <vector>

#include "cblb/engine.hpp"
#include "cblb/simulation.hpp"

namespace cblb::cli {

/// Runs one command line. Returns the process exit code:
/// 0 success, 2 configuration error, 3 data error, 4 estimation failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

nlohmann::ordered_json to_json(const ConfidenceInterval& ci);
nlohmann::ordered_json to_json(const BlbEstimate& est, const std::vector<std::string>& covariate_names);
nlohmann::ordered_json to_json(const ReplicationSummary& summary);

} // namespace cblb::cli
