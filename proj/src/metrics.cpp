#include "evlm/metrics.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "evlm/dataset.hpp"
#include "evlm/errors.hpp"

namespace evlm {

using nlohmann::ordered_json;

std::string normalize_answer(const std::string& s) {
    std::string spaced;
    spaced.reserve(s.size());
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            spaced.push_back(static_cast<char>(std::tolower(c)));
        } else {
            spaced.push_back(' ');
        }
    }
    std::istringstream in(spaced);
    std::string word, out;
    while (in >> word) {
        if (word == "a" || word == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += word;
    }
    return out;
}

double exact_match_qa(const std::vector<std::string>& predictions,
                      const std::vector<std::string>& references) {
    if (predictions.size() != references.size()) {
        throw ConfigError("exact_match: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(references.size()) + " references");
    }
    if (predictions.empty()) throw ConfigError("exact_match on empty lists");
    size_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (normalize_answer(predictions[i]) == normalize_answer(references[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::string MetricReport::to_json() const {
    ordered_json j;
    for (const auto& [task, m] : tasks) {
        j[task] = {{"exact_match", m.exact_match},
                   {"token_accuracy", m.token_accuracy},
                   {"perplexity", m.perplexity},
                   {"n", m.n}};
    }
    return j.dump(2);
}

namespace {

struct GroupAccum {
    size_t n = 0;
    size_t em_hits = 0;
    size_t tokens_correct = 0;
    size_t tokens_total = 0;
    double loss_sum = 0.0; // per-record mean CE, summed over records
};

struct RecordStats {
    bool exact = false;
    size_t correct = 0;
    size_t total = 0;
    double mean_ce = 0.0;
};

RecordStats score_record(const DatasetRecord& rec, const VoxelGrid& grid, const ParamStore& params,
                         const ModelConfig& cfg, const EvalOptions& opt) {
    const std::string& prompt = rec.conversations.at(0).text;
    const std::string& reference = rec.conversations.at(1).text;

    Tensor prefix = event_prefix(grid, params, cfg, /*use_adapter=*/true, /*use_aggregator=*/true);

    GenerateOptions gen;
    gen.max_new_tokens = opt.max_new_tokens;
    gen.temperature = 0.0;
    const std::string predicted = generate(prefix, prompt, params, cfg, gen);

    RecordStats st;
    st.exact = normalize_answer(predicted) == normalize_answer(reference);

    // Teacher-forced pass over the reference answer.
    AssembledSequence seq = assemble_sequence(prefix, tokenize(prompt), tokenize(reference),
                                              /*include_answer=*/true, params, cfg);
    Tensor logits = forward_logits(seq.embedded, params, cfg);
    const int len = logits.dim(0);
    const int v = cfg.vocab_size;
    double ce = 0.0;
    for (int t = 1; t < len; ++t) {
        if (!seq.supervised[static_cast<size_t>(t)]) continue;
        const double* row = logits.value().data() + static_cast<int64_t>(t - 1) * v;
        int arg = 0;
        double m = row[0];
        for (int j = 1; j < v; ++j) {
            if (row[j] > m) {
                m = row[j];
                arg = j;
            }
        }
        double z = 0.0;
        for (int j = 0; j < v; ++j) z += std::exp(row[j] - m);
        const int target = seq.ids[static_cast<size_t>(t)];
        ce += (m + std::log(z)) - row[target];
        if (arg == target) ++st.correct;
        ++st.total;
    }
    st.mean_ce = st.total > 0 ? ce / static_cast<double>(st.total) : 0.0;
    return st;
}

} // namespace

MetricReport evaluate_manifest(const std::filesystem::path& manifest, const ParamStore& params,
                               const ModelConfig& cfg, const EvalOptions& opt) {
    const std::vector<DatasetRecord> records = load_manifest(manifest);
    if (records.empty()) throw ConfigError("empty manifest: " + manifest.string());
    const std::filesystem::path base = manifest.parent_path();

    std::map<std::string, GroupAccum> groups;
    size_t n = records.size();
    if (opt.limit > 0 && opt.limit < n) n = opt.limit;

    for (size_t i = 0; i < n; ++i) {
        const DatasetRecord& rec = records[i];
        const EventStream stream = read_stream(base / rec.events_path);
        const VoxelGrid grid = bin_events(stream, 0, rec.meta.scene.duration_us, cfg.num_bins);
        const RecordStats st = score_record(rec, grid, params, cfg, opt);

        std::vector<std::string> keys = {"all", rec.task};
        if (rec.task == "vqa") keys.push_back("vqa:" + vqa_attribute(rec.meta));
        for (const std::string& key : keys) {
            GroupAccum& g = groups[key];
            ++g.n;
            if (st.exact) ++g.em_hits;
            g.tokens_correct += st.correct;
            g.tokens_total += st.total;
            g.loss_sum += st.mean_ce;
        }
    }

    MetricReport report;
    for (const auto& [key, g] : groups) {
        TaskMetrics m;
        m.n = g.n;
        m.exact_match = static_cast<double>(g.em_hits) / static_cast<double>(g.n);
        m.token_accuracy =
            g.tokens_total > 0
                ? static_cast<double>(g.tokens_correct) / static_cast<double>(g.tokens_total)
                : 0.0;
        m.perplexity = std::exp(g.loss_sum / static_cast<double>(g.n));
        report.tasks[key] = m;
    }
    return report;
}

} // namespace evlm
