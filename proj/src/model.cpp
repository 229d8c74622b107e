#include "evlm/model.hpp"

#include <cmath>

#include <json.hpp>

#include "evlm/errors.hpp"
#include "evlm/rng.hpp"

namespace evlm {

using nlohmann::ordered_json;

void ModelConfig::validate() const {
    if (image_side <= 0 || patch_side <= 0 || image_side % patch_side != 0) {
        throw ConfigError("image side " + std::to_string(image_side) +
                          " must be a positive multiple of patch side " + std::to_string(patch_side));
    }
    if (enc_dim <= 0 || enc_heads <= 0 || enc_dim % enc_heads != 0) {
        throw ConfigError("encoder width must be divisible by encoder heads");
    }
    if (llm_dim <= 0 || llm_heads <= 0 || llm_dim % llm_heads != 0) {
        throw ConfigError("lm width must be divisible by lm heads");
    }
    if (enc_depth < 1 || llm_depth < 1) throw ConfigError("depths must be >= 1");
    if (proj_hidden < 1) throw ConfigError("projector hidden width must be >= 1");
    if (vocab_size != tok::kVocabSize) {
        throw ConfigError("vocab size must be " + std::to_string(tok::kVocabSize));
    }
    if (max_seq < 8) throw ConfigError("max sequence length too small");
    if (num_bins < 1) throw ConfigError("num_bins must be >= 1");
    if (pooling != "mean" && pooling != "max") {
        throw ConfigError("pooling must be 'mean' or 'max', got '" + pooling + "'");
    }
}

std::string ModelConfig::to_json() const {
    ordered_json j;
    j["image_side"] = image_side;
    j["patch_side"] = patch_side;
    j["enc_dim"] = enc_dim;
    j["enc_depth"] = enc_depth;
    j["enc_heads"] = enc_heads;
    j["proj_hidden"] = proj_hidden;
    j["llm_dim"] = llm_dim;
    j["llm_depth"] = llm_depth;
    j["llm_heads"] = llm_heads;
    j["vocab_size"] = vocab_size;
    j["max_seq"] = max_seq;
    j["num_bins"] = num_bins;
    j["pooling"] = pooling;
    j["init_seed"] = init_seed;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const ordered_json::exception& e) {
        throw FormatError(std::string("malformed model config: ") + e.what());
    }
    ModelConfig c;
    c.image_side = j.value("image_side", c.image_side);
    c.patch_side = j.value("patch_side", c.patch_side);
    c.enc_dim = j.value("enc_dim", c.enc_dim);
    c.enc_depth = j.value("enc_depth", c.enc_depth);
    c.enc_heads = j.value("enc_heads", c.enc_heads);
    c.proj_hidden = j.value("proj_hidden", c.proj_hidden);
    c.llm_dim = j.value("llm_dim", c.llm_dim);
    c.llm_depth = j.value("llm_depth", c.llm_depth);
    c.llm_heads = j.value("llm_heads", c.llm_heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq = j.value("max_seq", c.max_seq);
    c.num_bins = j.value("num_bins", c.num_bins);
    c.pooling = j.value("pooling", c.pooling);
    c.init_seed = j.value("init_seed", c.init_seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters

const std::vector<std::string>& module_prefixes() {
    static const std::vector<std::string> kPrefixes = {"encoder", "projector", "adapter", "lm"};
    return kPrefixes;
}

namespace {

constexpr double kInitStd = 0.02;

Tensor init_weight(Rng& rng, int rows, int cols) {
    std::vector<double> v(static_cast<size_t>(rows) * cols);
    for (double& x : v) x = rng.truncated_normal(kInitStd);
    return Tensor({rows, cols}, std::move(v));
}

void add_block(ParamStore& p, Rng& rng, const std::string& prefix, int dim) {
    p.add(prefix + ".ln1.g", Tensor::full({dim}, 1.0));
    p.add(prefix + ".ln1.b", Tensor::zeros({dim}));
    p.add(prefix + ".attn.wq", init_weight(rng, dim, dim));
    p.add(prefix + ".attn.bq", Tensor::zeros({dim}));
    p.add(prefix + ".attn.wk", init_weight(rng, dim, dim));
    p.add(prefix + ".attn.bk", Tensor::zeros({dim}));
    p.add(prefix + ".attn.wv", init_weight(rng, dim, dim));
    p.add(prefix + ".attn.bv", Tensor::zeros({dim}));
    p.add(prefix + ".attn.wo", init_weight(rng, dim, dim));
    p.add(prefix + ".attn.bo", Tensor::zeros({dim}));
    p.add(prefix + ".ln2.g", Tensor::full({dim}, 1.0));
    p.add(prefix + ".ln2.b", Tensor::zeros({dim}));
    p.add(prefix + ".mlp.w1", init_weight(rng, dim, 4 * dim));
    p.add(prefix + ".mlp.b1", Tensor::zeros({4 * dim}));
    p.add(prefix + ".mlp.w2", init_weight(rng, 4 * dim, dim));
    p.add(prefix + ".mlp.b2", Tensor::zeros({dim}));
}

} // namespace

ParamStore build_params(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.init_seed, 0x6d6f64656c));
    ParamStore p;

    const int s_tokens = cfg.tokens_per_bin();
    const int patch_in = cfg.patch_side * cfg.patch_side * 2;
    p.add("encoder.patch_embed.w", init_weight(rng, patch_in, cfg.enc_dim));
    p.add("encoder.patch_embed.b", Tensor::zeros({cfg.enc_dim}));
    p.add("encoder.pos_embed", init_weight(rng, s_tokens, cfg.enc_dim));
    for (int i = 0; i < cfg.enc_depth; ++i) {
        add_block(p, rng, "encoder.blocks." + std::to_string(i), cfg.enc_dim);
    }
    p.add("encoder.ln_f.g", Tensor::full({cfg.enc_dim}, 1.0));
    p.add("encoder.ln_f.b", Tensor::zeros({cfg.enc_dim}));

    p.add("projector.w1", init_weight(rng, cfg.enc_dim, cfg.proj_hidden));
    p.add("projector.b1", Tensor::zeros({cfg.proj_hidden}));
    p.add("projector.w2", init_weight(rng, cfg.proj_hidden, cfg.llm_dim));
    p.add("projector.b2", Tensor::zeros({cfg.llm_dim}));

    // Identity adapter: stages that enable it start from stage-1 behavior.
    {
        std::vector<double> eye(static_cast<size_t>(cfg.llm_dim) * cfg.llm_dim, 0.0);
        for (int i = 0; i < cfg.llm_dim; ++i) eye[static_cast<size_t>(i) * cfg.llm_dim + i] = 1.0;
        p.add("adapter.w", Tensor({cfg.llm_dim, cfg.llm_dim}, std::move(eye)));
        p.add("adapter.b", Tensor::zeros({cfg.llm_dim}));
    }

    p.add("lm.tok_embed", init_weight(rng, cfg.vocab_size, cfg.llm_dim));
    p.add("lm.pos_embed", init_weight(rng, cfg.max_seq, cfg.llm_dim));
    for (int i = 0; i < cfg.llm_depth; ++i) {
        add_block(p, rng, "lm.blocks." + std::to_string(i), cfg.llm_dim);
    }
    p.add("lm.ln_f.g", Tensor::full({cfg.llm_dim}, 1.0));
    p.add("lm.ln_f.b", Tensor::zeros({cfg.llm_dim}));
    p.add("lm.head.w", init_weight(rng, cfg.llm_dim, cfg.vocab_size));
    p.add("lm.head.b", Tensor::zeros({cfg.vocab_size}));
    return p;
}

// ---------------------------------------------------------------------------
// Transformer pieces

namespace {

Tensor linear(const Tensor& x, const ParamStore& p, const std::string& w, const std::string& b) {
    return add_bias(matmul(x, p.get(w)), p.get(b));
}

// Pre-LN block; `mask` (optional) is added to every head's scores.
Tensor transformer_block(const Tensor& x, const ParamStore& p, const std::string& prefix, int heads,
                         const Tensor* mask) {
    const int dim = x.dim(1);
    const int head_dim = dim / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor u = layer_norm(x, p.get(prefix + ".ln1.g"), p.get(prefix + ".ln1.b"));
    Tensor q = linear(u, p, prefix + ".attn.wq", prefix + ".attn.bq");
    Tensor k = linear(u, p, prefix + ".attn.wk", prefix + ".attn.bk");
    Tensor v = linear(u, p, prefix + ".attn.wv", prefix + ".attn.bv");

    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice(q, 1, h * head_dim, head_dim);
        Tensor kh = slice(k, 1, h * head_dim, head_dim);
        Tensor vh = slice(v, 1, h * head_dim, head_dim);
        Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
        if (mask != nullptr) scores = add(scores, *mask);
        Tensor probs = softmax(scores, 1);
        head_outs.push_back(matmul(probs, vh));
    }
    Tensor att = concat(head_outs, 1);
    Tensor x1 = add(x, linear(att, p, prefix + ".attn.wo", prefix + ".attn.bo"));

    Tensor u2 = layer_norm(x1, p.get(prefix + ".ln2.g"), p.get(prefix + ".ln2.b"));
    Tensor m = gelu(linear(u2, p, prefix + ".mlp.w1", prefix + ".mlp.b1"));
    return add(x1, linear(m, p, prefix + ".mlp.w2", prefix + ".mlp.b2"));
}

Tensor causal_mask(int len) {
    std::vector<double> m(static_cast<size_t>(len) * len, 0.0);
    for (int i = 0; i < len; ++i) {
        for (int j = i + 1; j < len; ++j) m[static_cast<size_t>(i) * len + j] = -1e30;
    }
    return Tensor({len, len}, std::move(m));
}

void check_finite(const Tensor& t, const std::string& where) {
    for (double v : t.value()) {
        if (!std::isfinite(v)) throw NumericError("non-finite activations after " + where);
    }
}

} // namespace

Tensor encode_bins(const VoxelGrid& grid, const ParamStore& params, const ModelConfig& cfg) {
    if (grid.height != cfg.image_side || grid.width != cfg.image_side || grid.channels != 2) {
        throw ShapeError("grid " + std::to_string(grid.num_bins) + "x" + std::to_string(grid.channels) +
                         "x" + std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                         " does not match configured image side " + std::to_string(cfg.image_side));
    }
    const int p_side = cfg.patch_side;
    const int n_side = cfg.patches_per_side();
    const int s_tokens = cfg.tokens_per_bin();
    const int patch_in = p_side * p_side * 2;
    const int64_t plane = static_cast<int64_t>(grid.height) * grid.width;

    std::vector<Tensor> bins;
    bins.reserve(static_cast<size_t>(grid.num_bins));
    for (int t = 0; t < grid.num_bins; ++t) {
        // Patch rows ordered (patch_y, patch_x); entries ordered (c, py, px).
        std::vector<double> patches(static_cast<size_t>(s_tokens) * patch_in);
        const double* base = grid.data.value().data() + static_cast<int64_t>(t) * 2 * plane;
        for (int gy = 0; gy < n_side; ++gy) {
            for (int gx = 0; gx < n_side; ++gx) {
                double* row = patches.data() + (static_cast<size_t>(gy) * n_side + gx) * patch_in;
                size_t w = 0;
                for (int c = 0; c < 2; ++c) {
                    for (int py = 0; py < p_side; ++py) {
                        const double* src =
                            base + c * plane + static_cast<int64_t>(gy * p_side + py) * grid.width +
                            gx * p_side;
                        for (int px = 0; px < p_side; ++px) row[w++] = src[px];
                    }
                }
            }
        }
        Tensor x = Tensor({s_tokens, patch_in}, std::move(patches));
        x = linear(x, params, "encoder.patch_embed.w", "encoder.patch_embed.b");
        x = add(x, params.get("encoder.pos_embed"));
        for (int b = 0; b < cfg.enc_depth; ++b) {
            x = transformer_block(x, params, "encoder.blocks." + std::to_string(b), cfg.enc_heads,
                                  nullptr);
        }
        x = layer_norm(x, params.get("encoder.ln_f.g"), params.get("encoder.ln_f.b"));
        bins.push_back(reshape(x, {1, s_tokens, cfg.enc_dim}));
    }
    return concat(bins, 0);
}

Tensor aggregate(const Tensor& z, const std::string& pooling) {
    if (z.rank() != 3) {
        throw ShapeError("aggregate expects [T x S x D], got " + shape_str(z.shape()));
    }
    Tensor over_bins, over_tokens;
    if (pooling == "mean") {
        over_bins = mean_over_axis(z, 0);   // [S x D]
        over_tokens = mean_over_axis(z, 1); // [T x D]
    } else if (pooling == "max") {
        over_bins = max_over_axis(z, 0);
        over_tokens = max_over_axis(z, 1);
    } else {
        throw ConfigError("pooling must be 'mean' or 'max', got '" + pooling + "'");
    }
    return concat({over_bins, over_tokens}, 0);
}

Tensor project_and_adapt(const Tensor& e, const ParamStore& params, bool use_adapter) {
    if (e.rank() != 2) throw ShapeError("projector expects [K x D], got " + shape_str(e.shape()));
    Tensor h = gelu(linear(e, params, "projector.w1", "projector.b1"));
    Tensor y = linear(h, params, "projector.w2", "projector.b2");
    if (use_adapter) y = linear(y, params, "adapter.w", "adapter.b");
    return y;
}

AssembledSequence assemble_sequence(const Tensor& event_tokens, const std::vector<int>& prompt_ids,
                                    const std::vector<int>& answer_ids, bool include_answer,
                                    const ParamStore& params, const ModelConfig& cfg) {
    const int k = event_tokens.defined() ? event_tokens.dim(0) : 0;
    const int text_special = k > 0 ? 2 : 1; // <bos> (+ <event>)
    const int64_t total = text_special + k + static_cast<int64_t>(prompt_ids.size()) +
                          (include_answer ? static_cast<int64_t>(answer_ids.size()) + 1 : 0);
    if (total > cfg.max_seq) {
        throw ConfigError("sequence length " + std::to_string(total) + " exceeds the budget of " +
                          std::to_string(cfg.max_seq));
    }

    AssembledSequence out;
    out.ids.reserve(static_cast<size_t>(total));
    out.supervised.assign(static_cast<size_t>(total), 0);

    std::vector<int> lead = {tok::kBos};
    if (k > 0) lead.push_back(tok::kEvent);
    out.ids.insert(out.ids.end(), lead.begin(), lead.end());
    for (int i = 0; i < k; ++i) out.ids.push_back(0); // placeholder under event rows
    out.ids.insert(out.ids.end(), prompt_ids.begin(), prompt_ids.end());
    std::vector<int> tail;
    if (include_answer) {
        tail = answer_ids;
        tail.push_back(tok::kEos);
        out.ids.insert(out.ids.end(), tail.begin(), tail.end());
        for (int64_t i = total - static_cast<int64_t>(tail.size()); i < total; ++i) {
            out.supervised[static_cast<size_t>(i)] = 1;
        }
    }
    out.prefix_len = text_special + k;

    const Tensor& table = params.get("lm.tok_embed");
    std::vector<Tensor> parts;
    parts.push_back(embedding_gather(table, lead));
    if (k > 0) parts.push_back(event_tokens);
    std::vector<int> text_ids = prompt_ids;
    text_ids.insert(text_ids.end(), tail.begin(), tail.end());
    if (!text_ids.empty()) parts.push_back(embedding_gather(table, text_ids));
    Tensor emb = concat(parts, 0);
    Tensor pos = slice(params.get("lm.pos_embed"), 0, 0, static_cast<int>(total));
    out.embedded = add(emb, pos);
    return out;
}

Tensor forward_logits(const Tensor& embedded, const ParamStore& params, const ModelConfig& cfg) {
    const int len = embedded.dim(0);
    const Tensor mask = causal_mask(len);
    Tensor x = embedded;
    for (int b = 0; b < cfg.llm_depth; ++b) {
        x = transformer_block(x, params, "lm.blocks." + std::to_string(b), cfg.llm_heads, &mask);
        check_finite(x, "lm block " + std::to_string(b));
    }
    x = layer_norm(x, params.get("lm.ln_f.g"), params.get("lm.ln_f.b"));
    Tensor logits = linear(x, params, "lm.head.w", "lm.head.b");
    check_finite(logits, "lm head");
    return logits;
}

Tensor event_prefix(const VoxelGrid& grid, const ParamStore& params, const ModelConfig& cfg,
                    bool use_adapter, bool use_aggregator) {
    const VoxelGrid norm = normalize_grid(grid);
    Tensor z = encode_bins(norm, params, cfg);
    Tensor e;
    if (use_aggregator) {
        e = aggregate(z, cfg.pooling);
    } else {
        e = reshape(z, {z.dim(0) * z.dim(1), z.dim(2)});
    }
    return project_and_adapt(e, params, use_adapter);
}

VoxelGrid frame_as_grid(const std::vector<double>& intensity, int height, int width) {
    if (static_cast<size_t>(height) * width != intensity.size()) {
        throw ShapeError("intensity buffer does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    VoxelGrid g;
    g.num_bins = 1;
    g.height = height;
    g.width = width;
    std::vector<double> data(intensity.size() * 2);
    std::copy(intensity.begin(), intensity.end(), data.begin());
    std::copy(intensity.begin(), intensity.end(), data.begin() + static_cast<int64_t>(intensity.size()));
    g.data = Tensor({1, 2, height, width}, std::move(data));
    return g;
}

std::string generate(const Tensor& event_tokens, const std::string& prompt,
                     const ParamStore& params, const ModelConfig& cfg, const GenerateOptions& opt) {
    const std::vector<int> prompt_ids = tokenize(prompt);
    std::vector<int> answer_ids;
    Rng rng(mix_seed(opt.seed, 0x67656e));

    const int k = event_tokens.defined() ? event_tokens.dim(0) : 0;
    const int base_len = (k > 0 ? 2 : 1) + k + static_cast<int>(prompt_ids.size());

    for (int step = 0; step < opt.max_new_tokens; ++step) {
        if (base_len + static_cast<int>(answer_ids.size()) >= cfg.max_seq) break;
        // Generated tokens extend the prompt; positions match training.
        std::vector<int> context = prompt_ids;
        context.insert(context.end(), answer_ids.begin(), answer_ids.end());
        AssembledSequence seq = assemble_sequence(event_tokens, context, {}, false, params, cfg);
        Tensor logits = forward_logits(seq.embedded, params, cfg);
        const int last = logits.dim(0) - 1;
        const double* row = logits.value().data() + static_cast<int64_t>(last) * cfg.vocab_size;

        int next = 0;
        if (opt.temperature <= 0.0) {
            for (int j = 1; j < cfg.vocab_size; ++j) {
                if (row[j] > row[next]) next = j;
            }
        } else {
            double m = row[0];
            for (int j = 1; j < cfg.vocab_size; ++j) m = std::max(m, row[j]);
            std::vector<double> w(static_cast<size_t>(cfg.vocab_size));
            for (int j = 0; j < cfg.vocab_size; ++j) {
                w[static_cast<size_t>(j)] = std::exp((row[j] - m) / opt.temperature);
            }
            next = static_cast<int>(rng.categorical(w));
        }
        if (next == tok::kEos) break;
        if (next < tok::kByteOffset) break; // other specials end generation too
        answer_ids.push_back(next);
    }
    return detokenize(answer_ids);
}

} // namespace evlm
