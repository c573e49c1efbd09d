#include "cdemap/service.hpp"

#include <chrono>
#include <filesystem>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cdemap/text.hpp"

namespace cdemap {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view job_state_name(JobState s) {
    switch (s) {
        case JobState::queued: return "queued";
        case JobState::running: return "running";
        case JobState::done: return "done";
        case JobState::failed: return "failed";
    }
    return "queued";
}

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotFound:
        case ErrorCode::UnknownReview: return 404;
        case ErrorCode::NotPending: return 409;
        case ErrorCode::InvalidConcept: return 422;
        case ErrorCode::BadPayload:
        case ErrorCode::MalformedRow:
        case ErrorCode::InvalidEntry:
        case ErrorCode::OutOfRange:
        case ErrorCode::InvalidConfig: return 400;
        case ErrorCode::ProviderFailure: return 502;
        default: return 500;
    }
}

std::string error_body(ErrorCode code, const std::string& message) {
    ordered_json e;
    e["code"] = error_code_name(code);
    e["message"] = message;
    return ordered_json{{"error", e}}.dump();
}

namespace {

Millis now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

void reply(httplib::Response& res, int status, const std::string& body) {
    res.status = status;
    res.set_content(body, "application/json");
}

void reply_error(httplib::Response& res, const Error& e) {
    reply(res, http_status(e.code()), error_body(e.code(), e.what()));
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const Error& e) {
            reply_error(res, e);
        } catch (const json::exception& e) {
            reply(res, 400, error_body(ErrorCode::BadPayload, e.what()));
        } catch (const std::exception& e) {
            spdlog::error("{} {}: {}", req.method, req.path, e.what());
            reply(res, 500, error_body(ErrorCode::Io, e.what()));
        }
    };
}

std::size_t parse_count(const httplib::Request& req, const std::string& name, std::size_t fallback) {
    if (!req.has_param(name)) return fallback;
    const std::string v = req.get_param_value(name);
    try {
        std::size_t used = 0;
        long long n = std::stoll(v, &used);
        if (used != v.size() || n < 1) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw OutOfRange("query parameter " + name + " must be a positive integer, got '" + v + "'");
    }
}

ReviewId parse_review_id(const std::string& s) {
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UnknownReview("no review with id '" + s + "'");
    }
}

}  // namespace

Service::Service(PipelineContext ctx, ServiceConfig config)
    : ctx_(std::move(ctx)), config_(std::move(config)), rules_(ctx_.config.filter.rules) {
    if (!ctx_.reservoir) throw InvalidConfig("the service needs a reservoir");
    if (config_.parallelism < 1) throw InvalidConfig("parallelism must be >= 1");
    worker_ = std::thread([this] { worker_loop(); });
}

Service::~Service() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

PipelineContext Service::job_context() const {
    PipelineContext ctx = ctx_;
    std::lock_guard lock(mu_);
    ctx.config.filter.rules = rules_;
    return ctx;
}

std::string Service::submit_job(const std::string& body) {
    std::vector<DataDictionaryEntry> entries;
    try {
        entries = dictionary_from_json(json::parse(body));
    } catch (const json::exception& e) {
        throw BadPayload(std::string("dictionary payload: ") + e.what());
    } catch (const Error& e) {
        throw BadPayload(std::string("dictionary payload: ") + e.what());
    }
    std::lock_guard lock(mu_);
    MappingJob job;
    job.job_id = fmt::format("job-{:06d}", next_job_++);
    job.submitted_at = now_ms();
    job.entries = std::move(entries);
    std::string id = job.job_id;
    jobs_.emplace(id, std::move(job));
    queue_.push_back(id);
    cv_.notify_all();
    return id;
}

void Service::worker_loop() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            running_job_ = true;
            jobs_.at(id).state = JobState::running;
        }
        run_job(id);
        {
            std::lock_guard lock(mu_);
            running_job_ = false;
        }
        cv_.notify_all();
    }
}

void Service::run_job(const std::string& id) {
    std::vector<DataDictionaryEntry> entries;
    {
        std::lock_guard lock(mu_);
        entries = jobs_.at(id).entries;
    }
    try {
        PipelineContext ctx = job_context();
        auto results = map_dictionary(entries, ctx, config_.parallelism, [&](std::size_t done, std::size_t) {
            std::lock_guard lock(mu_);
            auto& job = jobs_.at(id);
            job.completed = std::max(job.completed, done);
        });
        auto body = results_to_json(results, ctx.store, config_.result_format);
        std::lock_guard lock(mu_);
        auto& job = jobs_.at(id);
        job.results_body = body.dump();
        job.completed = entries.size();
        job.state = JobState::done;
    } catch (const std::exception& e) {
        spdlog::error("job {} failed: {}", id, e.what());
        std::lock_guard lock(mu_);
        auto& job = jobs_.at(id);
        job.error = e.what();
        job.state = JobState::failed;
    }
}

std::optional<MappingJob> Service::get_job(const std::string& job_id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::string Service::job_body(const std::string& job_id) const {
    std::lock_guard lock(mu_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) throw NotFound("no job with id '" + job_id + "'");
    const MappingJob& job = it->second;
    ordered_json o;
    o["job_id"] = job.job_id;
    o["state"] = job_state_name(job.state);
    o["submitted_at"] = job.submitted_at;
    o["progress"] = {{"completed", job.completed}, {"total", job.entries.size()}};
    if (job.state == JobState::failed) o["error"] = job.error;
    std::string body = o.dump();
    if (job.state == JobState::done) {
        body.pop_back();
        body += ",\"results\":" + job.results_body + "}";
    }
    return body;
}

bool Service::wait_idle(std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    return cv_.wait_for(lock, timeout, [&] { return queue_.empty() && !running_job_; });
}

ordered_json Service::search(const std::string& query, std::size_t k) const {
    ordered_json o;
    o["query"] = query;
    o["k"] = k;
    ordered_json arr = ordered_json::array();
    for (const auto& c : ctx_.index.merge_retrieve(query, k)) {
        const Concept& cpt = ctx_.store.get_concept(c.omop_id);
        ordered_json r;
        r["omop_id"] = c.omop_id;
        r["code"] = cpt.code;
        r["name"] = cpt.name;
        r["vocabulary"] = cpt.vocabulary;
        r["domain"] = cpt.domain;
        r["matched_surface"] = c.matched_surface;
        r["fused_score"] = c.fused_score;
        r["dense_score"] = c.dense_score ? ordered_json(*c.dense_score) : ordered_json(nullptr);
        r["dense_rank"] = c.dense_rank ? ordered_json(*c.dense_rank) : ordered_json(nullptr);
        r["sparse_score"] = c.sparse_score ? ordered_json(*c.sparse_score) : ordered_json(nullptr);
        r["sparse_rank"] = c.sparse_rank ? ordered_json(*c.sparse_rank) : ordered_json(nullptr);
        arr.push_back(std::move(r));
    }
    o["candidates"] = std::move(arr);
    return o;
}

ordered_json Service::pending_page(std::size_t page, std::size_t page_size) const {
    ordered_json o;
    o["page"] = page;
    o["page_size"] = page_size;
    o["total"] = ctx_.reservoir->pending_count();
    ordered_json items = ordered_json::array();
    for (const auto& e : ctx_.reservoir->list_pending(page, page_size)) items.push_back(entry_record(e));
    o["items"] = std::move(items);
    return o;
}

ordered_json Service::decide(ReviewId id, const std::string& body, const std::string& header_reviewer) {
    json req;
    try {
        req = json::parse(body);
    } catch (const json::exception& e) {
        throw BadPayload(std::string("decision payload: ") + e.what());
    }
    if (!req.is_object() || !req.contains("decision") || !req.at("decision").is_string())
        throw BadPayload("decision payload needs a \"decision\" string");
    auto kind = parse_decision_kind(req.at("decision").get<std::string>());
    if (!kind) throw BadPayload("decision must be approve, reject or modify");
    std::string reviewer = req.contains("reviewer") && req.at("reviewer").is_string()
                               ? req.at("reviewer").get<std::string>()
                               : header_reviewer;
    if (text::trim(reviewer).empty()) throw BadPayload("a reviewer name is required");

    ReviewDecision decision{*kind, {}};
    if (*kind == ReviewDecision::Kind::modify) {
        if (!req.contains("concepts") || !req.at("concepts").is_array())
            throw BadPayload("modify needs a \"concepts\" array");
        for (const auto& c : req.at("concepts")) {
            if (!c.is_object() || !c.contains("omop_id") || !c.at("omop_id").is_number_integer())
                throw BadPayload("each concept needs an integer omop_id");
            decision.concepts.push_back(
                {c.value("code", std::string()), c.at("omop_id").get<OmopId>(), c.value("role", std::string())});
        }
    }
    return entry_record(ctx_.reservoir->apply_decision(id, decision, text::trim(reviewer)));
}

ordered_json Service::health() const {
    ordered_json o;
    o["status"] = "ok";
    o["concepts"] = ctx_.store.size();
    o["index_size"] = ctx_.index.size();
    o["pending_reviews"] = ctx_.reservoir->pending_count();
    std::lock_guard lock(mu_);
    o["jobs"] = jobs_.size();
    o["queued_jobs"] = queue_.size();
    o["rules_version"] = rules_.version;
    return o;
}

ordered_json Service::reload_rules() {
    if (config_.rules_path.empty()) throw InvalidConfig("the service was started without a rules file");
    auto rules = LinkingRules::from_file(config_.rules_path);
    rules.validate(ctx_.store);
    std::lock_guard lock(mu_);
    rules_ = std::move(rules);
    spdlog::info("linking rules reloaded from {} (version {})", config_.rules_path, rules_.version);
    return rules_.to_json();
}

void Service::register_routes(httplib::Server& server) {
    server.Post("/v1/jobs", guarded([this](const httplib::Request& req, httplib::Response& res) {
        std::string id = submit_job(req.body);
        reply(res, 202, ordered_json{{"job_id", id}, {"state", "queued"}}.dump());
    }));
    server.Get(R"(/v1/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        reply(res, 200, job_body(req.matches[1]));
    }));
    server.Get("/v1/review/pending", guarded([this](const httplib::Request& req, httplib::Response& res) {
        std::size_t page = parse_count(req, "page", 1);
        std::size_t size = parse_count(req, "page_size", config_.page_size);
        reply(res, 200, pending_page(page, size).dump());
    }));
    server.Get(R"(/v1/review/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        ReviewId id = parse_review_id(req.matches[1]);
        auto entry = ctx_.reservoir->get(id);
        if (!entry) throw UnknownReview("no review with id " + std::to_string(id));
        reply(res, 200, entry_record(*entry).dump());
    }));
    server.Post(R"(/v1/review/([^/]+)/decision)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        ReviewId id = parse_review_id(req.matches[1]);
        reply(res, 200, decide(id, req.body, req.get_header_value("X-Reviewer")).dump());
    }));
    server.Get("/v1/search", guarded([this](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("q")) throw BadPayload("missing query parameter q");
        std::size_t k = parse_count(req, "k", kDefaultTopK);
        reply(res, 200, search(req.get_param_value("q"), k).dump());
    }));
    server.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, health().dump());
    }));
    server.Post("/v1/rules/reload", guarded([this](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, reload_rules().dump());
    }));
    if (!config_.ui_dir.empty() && std::filesystem::is_directory(config_.ui_dir)) {
        server.set_mount_point("/ui", config_.ui_dir);
    }
}

ServiceServer::ServiceServer(Service& service, const std::string& host, int port)
    : server_(std::make_unique<httplib::Server>()), host_(host) {
    service.register_routes(*server_);
    if (port == 0) {
        port_ = server_->bind_to_any_port(host_);
    } else {
        port_ = server_->bind_to_port(host_, port) ? port : -1;
    }
    if (port_ < 0) throw IoError("cannot bind " + host_ + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

ServiceServer::~ServiceServer() { stop(); }

void ServiceServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace cdemap
