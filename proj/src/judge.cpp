#include "evlm/judge.hpp"

#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "evlm/errors.hpp"

namespace evlm {

using nlohmann::ordered_json;

JudgeConfig JudgeConfig::from_env(const std::string& template_id) {
    JudgeConfig cfg;
    const char* url = std::getenv("EVENTGPT_JUDGE_URL");
    if (url == nullptr || *url == '\0') {
        throw ConfigError("EVENTGPT_JUDGE_URL is not set; judging needs an endpoint");
    }
    cfg.url = url;
    if (const char* key = std::getenv("EVENTGPT_JUDGE_KEY")) cfg.api_key = key;
    cfg.template_id = template_id;
    return cfg;
}

std::string judge_prompt(const std::string& template_id, const std::string& question,
                         const std::string& reference, const std::string& prediction) {
    std::string criteria;
    if (template_id == "dc") {
        criteria = "Rate how accurately and completely the candidate caption describes the scene, "
                   "covering the key objects, motion and details.";
    } else if (template_id == "cr") {
        criteria = "Rate the depth and logical coherence of the candidate answer's reasoning, "
                   "including multi-step inference about the scene.";
    } else if (template_id == "vqa") {
        criteria = "Rate the precision and contextual correctness of the candidate answer to the "
                   "question.";
    } else {
        throw ConfigError("unknown judge template '" + template_id + "' (expected dc, cr or vqa)");
    }
    return criteria +
           " Use an integer scale from 1 (poor) to 5 (excellent).\n\n"
           "Question: " + question + "\n"
           "Reference answer: " + reference + "\n"
           "Candidate answer: " + prediction + "\n\n"
           "Reply with 'Score: N' where N is an integer from 1 to 5.";
}

namespace {

struct ParsedUrl {
    bool https = false;
    std::string host_port;
    std::string path;
};

ParsedUrl parse_url(const std::string& url) {
    ParsedUrl p;
    std::string rest;
    if (url.rfind("http://", 0) == 0) {
        rest = url.substr(7);
    } else if (url.rfind("https://", 0) == 0) {
        p.https = true;
        rest = url.substr(8);
    } else {
        throw ConfigError("judge url must start with http:// or https://, got '" + url + "'");
    }
    const size_t slash = rest.find('/');
    p.host_port = slash == std::string::npos ? rest : rest.substr(0, slash);
    p.path = slash == std::string::npos ? "/" : rest.substr(slash);
    if (p.host_port.empty()) throw ConfigError("judge url has no host: '" + url + "'");
    return p;
}

void append_log(const JudgeConfig& cfg, const std::string& request_body,
                const std::string& response_body, const std::string& outcome) {
    if (cfg.log_path.empty()) return;
    static std::mutex log_mutex;
    std::lock_guard<std::mutex> lock(log_mutex);
    std::ofstream f(cfg.log_path, std::ios::app);
    if (!f) return; // audit log failures never block scoring
    ordered_json j;
    j["url"] = cfg.url;
    j["api_key"] = cfg.api_key.empty() ? "" : "<redacted>";
    j["request"] = request_body;
    j["response"] = response_body;
    j["outcome"] = outcome;
    f << j.dump() << "\n";
}

/// First run of digits in the text, as an integer; -1 when absent.
int first_integer(const std::string& text) {
    for (size_t i = 0; i < text.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            size_t j = i;
            long v = 0;
            while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j])) && v < 1000) {
                v = v * 10 + (text[j] - '0');
                ++j;
            }
            return static_cast<int>(v);
        }
    }
    return -1;
}

} // namespace

int judge_score(const JudgeConfig& cfg, const std::string& question, const std::string& reference,
                const std::string& prediction) {
    const ParsedUrl url = parse_url(cfg.url);
    if (url.https) {
        throw ConfigError("https judge endpoints are not supported by this build; "
                          "use an http proxy or terminate TLS locally");
    }

    ordered_json body;
    body["model"] = cfg.model;
    body["messages"] = ordered_json::array(
        {{{"role", "user"},
          {"content", judge_prompt(cfg.template_id, question, reference, prediction)}}});
    const std::string request_body = body.dump();

    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        httplib::Client client(url.host_port);
        client.set_connection_timeout(cfg.timeout_s, 0);
        client.set_read_timeout(cfg.timeout_s, 0);
        httplib::Headers headers;
        if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);

        httplib::Result res = client.Post(url.path, headers, request_body, "application/json");
        if (!res) {
            last_error = "transport failure: " + httplib::to_string(res.error());
            append_log(cfg, request_body, "", last_error);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            last_error = "http status " + std::to_string(res->status);
            append_log(cfg, request_body, res->body, last_error);
            continue;
        }
        std::string content;
        try {
            const ordered_json reply = ordered_json::parse(res->body);
            content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const ordered_json::exception& e) {
            last_error = std::string("unparseable reply: ") + e.what();
            append_log(cfg, request_body, res->body, last_error);
            continue;
        }
        const int score = first_integer(content);
        if (score < 1 || score > 5) {
            last_error = "no integer 1-5 in reply: '" + content + "'";
            append_log(cfg, request_body, res->body, last_error);
            continue;
        }
        append_log(cfg, request_body, res->body, "score " + std::to_string(score));
        return score;
    }
    throw JudgeError("judge failed after " + std::to_string(cfg.max_retries + 1) + " attempts (" +
                     last_error + ")");
}

std::vector<int> judge_batch(const JudgeConfig& cfg, const std::vector<JudgeItem>& items) {
    std::vector<int> scores(items.size(), 0);
    std::vector<std::string> errors(items.size());
    std::atomic<size_t> next{0};

    const int workers = std::max(1, std::min<int>(cfg.max_inflight, static_cast<int>(items.size())));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= items.size()) return;
                try {
                    scores[i] = judge_score(cfg, items[i].question, items[i].reference,
                                            items[i].prediction);
                } catch (const Error& e) {
                    errors[i] = e.what();
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();

    for (size_t i = 0; i < items.size(); ++i) {
        if (!errors[i].empty()) {
            throw JudgeError("item " + std::to_string(i) + ": " + errors[i]);
        }
    }
    return scores;
}

} // namespace evlm
