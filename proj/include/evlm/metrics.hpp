#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evlm/model.hpp"

namespace evlm {

/// Case-folds, strips punctuation, collapses whitespace and drops the
/// articles "a" and "the" (documented: keeps template phrasing from
/// inflating the metric).
std::string normalize_answer(const std::string& s);

/// Fraction of normalized-equal prediction/reference pairs.
double exact_match_qa(const std::vector<std::string>& predictions,
                      const std::vector<std::string>& references);

struct TaskMetrics {
    double exact_match = 0.0;
    double token_accuracy = 0.0;
    double perplexity = 1.0;
    size_t n = 0;
};

struct MetricReport {
    std::map<std::string, TaskMetrics> tasks;
    std::string to_json() const;
};

struct EvalOptions {
    int max_new_tokens = 48;
    size_t limit = 0; // 0 = all records
};

/// Greedy generation + teacher-forced statistics over a manifest.
/// Groups: one entry per task, plus "vqa:<attribute>" subgroups and an
/// "all" aggregate. Perplexity is exp of the record-mean masked loss.
MetricReport evaluate_manifest(const std::filesystem::path& manifest, const ParamStore& params,
                               const ModelConfig& cfg, const EvalOptions& opt = {});

} // namespace evlm
