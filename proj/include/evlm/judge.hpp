#pragma once

#include <string>
#include <vector>

namespace evlm {

// Client for an external 1-5 scoring endpoint speaking the generic
// chat-completion contract (JSON body with model + messages). Endpoint
// and key come from EVENTGPT_JUDGE_URL / EVENTGPT_JUDGE_KEY.
struct JudgeConfig {
    std::string url;
    std::string model = "judge";
    std::string api_key;
    std::string template_id = "vqa"; // dc | cr | vqa
    int timeout_s = 30;
    int max_retries = 2;
    int max_inflight = 2;
    std::string log_path; // JSONL audit log (key redacted); empty = off

    /// Reads url/key from the environment; throws ConfigError when the
    /// endpoint variable is missing.
    static JudgeConfig from_env(const std::string& template_id);
};

/// Fills the selected template and posts one scoring request. Transport
/// failures and unusable replies are retried max_retries times, then
/// raise JudgeError; a score is never fabricated.
int judge_score(const JudgeConfig& cfg, const std::string& question, const std::string& reference,
                const std::string& prediction);

struct JudgeItem {
    std::string question;
    std::string reference;
    std::string prediction;
};

/// Scores a batch with at most cfg.max_inflight concurrent requests;
/// results align with the input order.
std::vector<int> judge_batch(const JudgeConfig& cfg, const std::vector<JudgeItem>& items);

/// The prompt sent for a given template (exposed for tests).
std::string judge_prompt(const std::string& template_id, const std::string& question,
                         const std::string& reference, const std::string& prediction);

} // namespace evlm
