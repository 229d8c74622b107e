#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evlm/event_stream.hpp"
#include "evlm/param_store.hpp"
#include "evlm/tokenizer.hpp"

namespace evlm {

struct ModelConfig {
    int image_side = 64;
    int patch_side = 16;
    int enc_dim = 64;
    int enc_depth = 2;
    int enc_heads = 4;
    int proj_hidden = 128;
    int llm_dim = 128;
    int llm_depth = 4;
    int llm_heads = 4;
    int vocab_size = tok::kVocabSize;
    int max_seq = 192;
    int num_bins = 5;
    std::string pooling = "mean"; // mean | max
    uint64_t init_seed = 0;

    int patches_per_side() const { return image_side / patch_side; }
    int tokens_per_bin() const { return patches_per_side() * patches_per_side(); }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

/// Builds the full named-parameter set (encoder, projector, adapter, lm)
/// and initializes it from cfg.init_seed: truncated normal std 0.02 for
/// weights, zeros for biases, ones for norm gains, identity for the
/// adapter so enabling it is a no-op at first.
ParamStore build_params(const ModelConfig& cfg);

/// Canonical top-level module prefixes.
const std::vector<std::string>& module_prefixes();

// --- forward pieces -------------------------------------------------------

/// Per-bin patchify + linear embed + positional embed + encoder blocks;
/// weights shared across bins. Returns Z of shape [T x S x D].
Tensor encode_bins(const VoxelGrid& grid, const ParamStore& params, const ModelConfig& cfg);

/// Parameter-free fusion: pool over bins -> [S x D], pool over tokens ->
/// [T x D], concatenated to [(S + T) x D] with the bin-pooled rows first.
Tensor aggregate(const Tensor& z, const std::string& pooling = "mean");

/// Two-layer MLP projector, then (optionally) the linear adapter.
Tensor project_and_adapt(const Tensor& e, const ParamStore& params, bool use_adapter);

struct AssembledSequence {
    Tensor embedded;             // [L x D_llm]
    std::vector<int> ids;        // target ids; 0 at event-embedding rows
    std::vector<uint8_t> supervised; // true on answer tokens and <eos>
    int prefix_len = 0;          // rows before the first prompt token
};

/// Layout: <bos>, <event>, K event rows, prompt, answer, <eos>. The
/// <event> marker and event rows are omitted when K = 0; the answer and
/// trailing <eos> are omitted when include_answer is false (generation).
AssembledSequence assemble_sequence(const Tensor& event_tokens, const std::vector<int>& prompt_ids,
                                    const std::vector<int>& answer_ids, bool include_answer,
                                    const ParamStore& params, const ModelConfig& cfg);

/// Causal language model over an assembled sequence -> [L x V] logits.
Tensor forward_logits(const Tensor& embedded, const ParamStore& params, const ModelConfig& cfg);

// --- end-to-end helpers ----------------------------------------------------

/// Event path: normalize -> encode -> aggregate -> project(+adapt).
Tensor event_prefix(const VoxelGrid& grid, const ParamStore& params, const ModelConfig& cfg,
                    bool use_adapter, bool use_aggregator);

/// Image path: an intensity frame as a single-bin, duplicated-channel grid.
VoxelGrid frame_as_grid(const std::vector<double>& intensity, int height, int width);

struct GenerateOptions {
    int max_new_tokens = 48;
    double temperature = 0.0; // 0 = greedy
    uint64_t seed = 0;
};

/// Autoregressive decoding conditioned on an event prefix; stops at <eos>.
std::string generate(const Tensor& event_tokens, const std::string& prompt,
                     const ParamStore& params, const ModelConfig& cfg, const GenerateOptions& opt);

} // namespace evlm
