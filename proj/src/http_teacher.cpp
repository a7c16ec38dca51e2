#include "exgrpo/http_teacher.hpp"

#include <ctime>
#include <thread>

#include "exgrpo/error.hpp"
#include "exgrpo/text.hpp"
#include "httplib.h"

namespace exgrpo {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

HttpTransport::HttpTransport(std::string endpoint, std::string bearer_token, std::chrono::seconds timeout)
    : token_(std::move(bearer_token)), timeout_(timeout) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL: " + endpoint);
    const auto path_start = endpoint.find('/', scheme_end + 3);
    base_ = endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
}

HttpReply HttpTransport::post(const json& request) {
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
    auto res = client.Post(path_, headers, request.dump(), "application/json");
    HttpReply reply;
    if (!res) {
        reply.transport_error = httplib::to_string(res.error());
        return reply;
    }
    reply.status = res->status;
    reply.body = res->body;
    return reply;
}

ReplayTransport::ReplayTransport(const std::filesystem::path& log) {
    std::ifstream in(log);
    if (!in) throw IoError("cannot open replay log " + log.string());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) continue;
        try {
            const auto j = json::parse(line);
            HttpReply r;
            r.status = j.at("response").at("status").get<int>();
            r.body = j.at("response").at("body").get<std::string>();
            replies_[j.at("request").dump()].push_back(std::move(r));
        } catch (const json::exception& e) {
            throw ParseError(std::string("replay log: ") + e.what(), n);
        }
    }
}

HttpReply ReplayTransport::post(const json& request) {
    auto it = replies_.find(request.dump());
    if (it == replies_.end() || it->second.empty()) {
        HttpReply r;
        r.transport_error = "request not present in replay log";
        return r;
    }
    HttpReply r = std::move(it->second.front());
    it->second.pop_front();
    return r;
}

HttpTeacher::HttpTeacher(HttpTeacherConfig config, std::unique_ptr<ChatTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (config_.max_retries < 0) throw ConfigError("max_retries must be non-negative");
    if (config_.answer_delimiter.empty()) throw ConfigError("answer delimiter must not be empty");
    if (!config_.replay_log.empty()) {
        log_.open(config_.replay_log, std::ios::app);
        if (!log_) throw IoError("cannot open replay log " + config_.replay_log.string());
    }
}

HttpTeacherStats HttpTeacher::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::string HttpTeacher::chat(const std::string& user_prompt) {
    const json request = {
        {"model", config_.model},
        {"messages", json::array({{{"role", "system"},
                                   {"content", "You are a careful teacher who reasons step by step."}},
                                  {{"role", "user"}, {"content", user_prompt}}})},
        {"temperature", config_.temperature}};

    std::lock_guard lock(mutex_);
    ++stats_.requests;
    stats_.last_call_retries = 0;
    auto backoff = config_.initial_backoff;
    for (int attempt = 0;; ++attempt) {
        ++stats_.attempts;
        HttpReply reply = transport_->post(request);
        if (log_.is_open()) {
            const json entry = {{"request", request},
                                {"response", {{"status", reply.status}, {"body", reply.body}}},
                                {"timestamp", utc_timestamp()}};
            log_ << entry.dump() << '\n' << std::flush;
        }
        if (reply.status >= 200 && reply.status < 300) {
            try {
                const auto body = json::parse(reply.body);
                return body.at("choices").at(0).at("message").at("content").get<std::string>();
            } catch (const json::exception&) {
                throw OracleError("chat reply is not a chat-completions object", reply.body);
            }
        }
        if (attempt >= config_.max_retries) {
            const std::string why = reply.status ? "HTTP status " + std::to_string(reply.status)
                                                 : "transport error: " + reply.transport_error;
            throw OracleError(why + " after " + std::to_string(attempt) + " retries", reply.body);
        }
        ++stats_.retries;
        ++stats_.last_call_retries;
        if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

TeacherAnswer HttpTeacher::parse_completion(const std::string& content) const {
    const auto pos = content.rfind(config_.answer_delimiter);
    if (pos == std::string::npos)
        throw OracleError("reply lacks the answer delimiter '" + config_.answer_delimiter + "'", content);
    std::string answer = trim(std::string_view(content).substr(pos + config_.answer_delimiter.size()));
    while (!answer.empty() && (answer.back() == '.' || answer.back() == ' ')) answer.pop_back();
    if (!answer.empty() && answer.front() == ':') answer = trim(answer.substr(1));
    if (answer.empty()) throw OracleError("reply has an empty answer", content);

    TeacherAnswer out;
    std::istringstream in(content.substr(0, pos));
    for (std::string line; std::getline(in, line);)
        if (auto t = trim(line); !t.empty()) out.reasoning.add(std::move(t));
    if (out.reasoning.empty()) out.reasoning.add(trim(content.substr(pos)));
    out.answer = std::move(answer);
    return out;
}

AugmentedTuple HttpTeacher::generate_probe(const Task& task, RuleId rule) {
    const auto& info = rule_info(rule);
    std::string prompt = "Explanatory rule: " + std::string(info.title) + ". " + std::string(info.instruction) +
                         "\nOriginal question: " + task.question + "\nOriginal answer: " + task.answer_text +
                         "\nOriginal reasoning: " + task.reasoning.joined(" ") +
                         "\nWrite one new probing question on the first line, prefixed with 'Question:'. "
                         "Then answer it step by step, one step per line, and end with '" +
                         config_.answer_delimiter + " <answer>.'";
    const std::string content = chat(prompt);

    std::istringstream in(content);
    std::string first;
    while (std::getline(in, first) && trim(first).empty()) {
    }
    first = trim(first);
    if (first.rfind("Question:", 0) == 0) first = trim(first.substr(9));
    if (first.empty() || first.find(config_.answer_delimiter) != std::string::npos)
        throw OracleError("reply does not start with a probe question", content);
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    AugmentedTuple t;
    t.parent_task_id = task.id;
    t.rule = rule;
    t.q_aug = first;
    auto parsed = parse_completion(rest.empty() ? content : rest);
    t.r_aug = std::move(parsed.reasoning);
    t.a_aug = std::move(parsed.answer);
    return t;
}

TeacherAnswer HttpTeacher::answer_probe(const std::string& q_aug, const std::string& context) {
    std::string prompt = context.empty() ? "" : context + "\n";
    prompt += q_aug + "\nAnswer step by step, one step per line, and end with '" + config_.answer_delimiter +
              " <answer>.'";
    return parse_completion(chat(prompt));
}

std::string HttpTeacher::predict_answer(const std::string& prompt) {
    const std::string content =
        chat(prompt + "\nAnswer the last question and end with '" + config_.answer_delimiter + " <answer>.'");
    return parse_completion(content).answer;
}

std::unique_ptr<HttpTeacher> http_teacher(const std::string& endpoint, const std::string& model_name,
                                          const std::string& auth_token, HttpTeacherConfig base) {
    base.endpoint = endpoint;
    base.model = model_name;
    base.auth_token = auth_token;
    auto transport = std::make_unique<HttpTransport>(endpoint, auth_token, base.timeout);
    return std::make_unique<HttpTeacher>(std::move(base), std::move(transport));
}

std::unique_ptr<HttpTeacher> replay_teacher(const std::filesystem::path& log, HttpTeacherConfig base) {
    base.replay_log.clear();
    base.initial_backoff = std::chrono::milliseconds{0};
    return std::make_unique<HttpTeacher>(std::move(base), std::make_unique<ReplayTransport>(log));
}

}  // namespace exgrpo
