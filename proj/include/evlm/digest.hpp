#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace evlm {

class ParamStore;

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

/// SHA-256 over a parameter's in-memory float64 buffer.
std::string param_digest(const std::vector<double>& value);

/// Digest per top-level module prefix ("encoder", "projector", ...),
/// computed over the concatenation of each member's digest in store order.
std::map<std::string, std::string> module_digests(const ParamStore& params);

} // namespace evlm
