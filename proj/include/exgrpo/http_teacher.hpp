#pragma once

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "exgrpo/probes.hpp"
#include "json.hpp"

namespace exgrpo {

struct HttpReply {
    int status = 0;  // 0 when the transport itself failed
    std::string body;
    std::string transport_error;
};

/// Moves one chat-completions request body to an endpoint and back.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual HttpReply post(const nlohmann::json& request) = 0;
};

/// Live transport over cpp-httplib. `endpoint` is the full URL of the chat-completions route.
class HttpTransport final : public ChatTransport {
public:
    HttpTransport(std::string endpoint, std::string bearer_token, std::chrono::seconds timeout);
    HttpReply post(const nlohmann::json& request) override;

private:
    std::string base_;
    std::string path_;
    std::string token_;
    std::chrono::seconds timeout_;
};

/// Serves recorded replies from a replay log, matching on the exact request body in order.
class ReplayTransport final : public ChatTransport {
public:
    explicit ReplayTransport(const std::filesystem::path& log);
    HttpReply post(const nlohmann::json& request) override;

private:
    std::map<std::string, std::deque<HttpReply>> replies_;
};

struct HttpTeacherConfig {
    std::string endpoint;
    std::string model;
    std::string auth_token;
    std::string answer_delimiter = "The best answer is";
    double temperature = 0.0;
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{200};
    std::chrono::seconds timeout{60};
    std::filesystem::path replay_log;  // appended to when non-empty
};

struct HttpTeacherStats {
    std::size_t requests = 0;      // logical chat calls
    std::size_t attempts = 0;      // HTTP round trips including retries
    std::size_t retries = 0;
    std::size_t last_call_retries = 0;
};

/// Teacher backed by an OpenAI-compatible chat-completions endpoint.
///
/// Each oracle call sends one request carrying the rule prompt. Replies are split on
/// `answer_delimiter` into reasoning lines and an answer. Non-2xx replies are retried with
/// exponential backoff up to `max_retries`; every round trip is appended to the replay log
/// as {request, response, timestamp}.
class HttpTeacher final : public TeacherOracle {
public:
    HttpTeacher(HttpTeacherConfig config, std::unique_ptr<ChatTransport> transport);

    AugmentedTuple generate_probe(const Task& task, RuleId rule) override;
    TeacherAnswer answer_probe(const std::string& q_aug, const std::string& context) override;
    std::string predict_answer(const std::string& prompt) override;

    HttpTeacherStats stats() const;
    const HttpTeacherConfig& config() const noexcept { return config_; }

    /// Split a completion into reasoning steps and answer. Throws OracleError carrying the raw text.
    TeacherAnswer parse_completion(const std::string& content) const;

private:
    std::string chat(const std::string& user_prompt);

    HttpTeacherConfig config_;
    std::unique_ptr<ChatTransport> transport_;
    mutable std::mutex mutex_;
    std::ofstream log_;
    HttpTeacherStats stats_;
};

/// Live teacher. The pipeline passes the token read from its configured environment variable.
std::unique_ptr<HttpTeacher> http_teacher(const std::string& endpoint, const std::string& model_name,
                                          const std::string& auth_token, HttpTeacherConfig base = {});

/// Offline teacher that replays a previously recorded log without network access.
std::unique_ptr<HttpTeacher> replay_teacher(const std::filesystem::path& log, HttpTeacherConfig base = {});

}  // namespace exgrpo
