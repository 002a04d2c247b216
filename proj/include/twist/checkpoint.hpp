#ifndef TWIST_CHECKPOINT_HPP_
#define TWIST_CHECKPOINT_HPP_

#include <json.hpp>

#include <string>
#include <vector>

#include "twist/params.hpp"

namespace twist {

// TWCK checkpoint: magic + version + length-prefixed JSON manifest mapping
// parameter names to dtype/shape/offset (plus an arbitrary "spec" block),
// followed by raw little-endian f32 buffers.

void save_checkpoint(const std::string& path,
                     const std::vector<const ParameterSet<float>*>& sets,
                     const nlohmann::json& spec);

struct CheckpointData {
  nlohmann::json spec;
  std::vector<std::pair<std::string, MatF>> params;  // file order
};

CheckpointData load_checkpoint_raw(const std::string& path);

// Loads values for every parameter in ps (all must be present with matching
// shapes); entries in the file that ps does not own are ignored. Returns the
// spec block for the caller to validate.
nlohmann::json load_checkpoint_into(ParameterSet<float>& ps,
                                    const std::string& path);

// FNV-1a over the raw file bytes; used to assert artifacts untouched.
uint64_t file_hash(const std::string& path);

}  // namespace twist

#endif  // TWIST_CHECKPOINT_HPP_
