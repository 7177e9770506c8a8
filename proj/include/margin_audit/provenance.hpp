#pragma once

#include <cstdint>
#include <string>

namespace margin_audit {

// Stamped into every persisted artifact so it can be traced to its config.
struct Provenance {
  std::string config_hash;
  std::uint64_t master_seed = 0;
};

}  // namespace margin_audit
