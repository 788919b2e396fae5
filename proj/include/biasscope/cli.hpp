#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biasscope/config.hpp"
#include "biasscope/gateway.hpp"

namespace biasscope {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Runs one command line. Results go to `out`, diagnostics to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Backend named by `config.backend`. `kill_after_calls` > 0 terminates the
// process right before that backend call, without any cleanup.
std::shared_ptr<Backend> make_backend(const RunConfig& config, long kill_after_calls = 0);
GatewayOptions gateway_options(const RunConfig& config);

}  // namespace biasscope
