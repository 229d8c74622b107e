#include "evlm/digest.hpp"

#include <openssl/evp.h>

#include "evlm/errors.hpp"
#include "evlm/param_store.hpp"

namespace evlm {

std::string sha256_hex(const void* data, size_t len) {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int out_len = 0;
    if (EVP_Digest(data, len, out, &out_len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string s(out_len * 2, '0');
    for (unsigned int i = 0; i < out_len; ++i) {
        s[2 * i] = hex[out[i] >> 4];
        s[2 * i + 1] = hex[out[i] & 0xf];
    }
    return s;
}

std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

std::string param_digest(const std::vector<double>& value) {
    return sha256_hex(value.data(), value.size() * sizeof(double));
}

std::map<std::string, std::string> module_digests(const ParamStore& params) {
    std::map<std::string, std::string> concatenated;
    for (const std::string& name : params.names()) {
        const size_t dot = name.find('.');
        const std::string module = dot == std::string::npos ? name : name.substr(0, dot);
        concatenated[module] += param_digest(params.get(name).value());
    }
    std::map<std::string, std::string> out;
    for (const auto& [module, blob] : concatenated) out[module] = sha256_hex(blob);
    return out;
}

} // namespace evlm
