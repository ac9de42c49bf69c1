#pragma once

#include <string>

#include "direal/nn.hpp"

namespace direal {

// Binary network snapshot: an 8-byte magic, a little-endian u32 layer count,
// per-layer construction records, then every parameter and persistent buffer
// as little-endian f64 in declaration order. Round-trips bit-exactly.
void save_network(const std::string& path, Network& net);
Network load_network(const std::string& path);

}  // namespace direal
