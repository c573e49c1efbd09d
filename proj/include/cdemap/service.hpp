#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdemap/errors.hpp"
#include "cdemap/pipeline.hpp"

namespace httplib {
class Server;
}

namespace cdemap {

enum class JobState { queued, running, done, failed };

std::string_view job_state_name(JobState s);

struct MappingJob {
    std::string job_id;
    JobState state = JobState::queued;
    Millis submitted_at = 0;
    std::vector<DataDictionaryEntry> entries;
    std::size_t completed = 0;
    std::string error;
    // Serialized results, fixed once the job is done.
    std::string results_body;
};

// HTTP status for a library error code.
int http_status(ErrorCode code);
// {"error":{"code":"...","message":"..."}}
std::string error_body(ErrorCode code, const std::string& message);

struct ServiceConfig {
    std::size_t parallelism = 2;
    std::size_t page_size = 20;
    std::string rules_path;  // enables POST /v1/rules/reload
    std::string ui_dir;      // served under /ui when it exists
    ResultFormat result_format;
};

// Mapping jobs, review queue and retrieval debugging over /v1. Jobs run one
// at a time on a worker thread, each with the pipeline's bounded
// parallelism; the reservoir is shared with the jobs, so a decision is
// visible to every job submitted after it commits.
class Service {
public:
    // ctx.reservoir must be set.
    Service(PipelineContext ctx, ServiceConfig config = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void register_routes(httplib::Server& server);

    // Throws BadPayload when the body is not a data dictionary.
    std::string submit_job(const std::string& body);
    std::optional<MappingJob> get_job(const std::string& job_id) const;
    // Response body for GET /v1/jobs/{id}; throws NotFound.
    std::string job_body(const std::string& job_id) const;
    bool wait_idle(std::chrono::milliseconds timeout) const;

    nlohmann::ordered_json search(const std::string& query, std::size_t k) const;
    nlohmann::ordered_json pending_page(std::size_t page, std::size_t page_size) const;
    nlohmann::ordered_json decide(ReviewId id, const std::string& body, const std::string& header_reviewer);
    nlohmann::ordered_json health() const;
    // Reloads linking rules for jobs submitted afterwards.
    nlohmann::ordered_json reload_rules();

    Reservoir& reservoir() const { return *ctx_.reservoir; }

private:
    void worker_loop();
    void run_job(const std::string& job_id);
    PipelineContext job_context() const;

    PipelineContext ctx_;
    ServiceConfig config_;

    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::map<std::string, MappingJob> jobs_;
    std::deque<std::string> queue_;
    std::uint64_t next_job_ = 1;
    bool running_job_ = false;
    bool stopping_ = false;
    LinkingRules rules_;
    std::thread worker_;
};

// Runs a server on 127.0.0.1 at an ephemeral port in a background thread.
class ServiceServer {
public:
    explicit ServiceServer(Service& service, const std::string& host = "127.0.0.1", int port = 0);
    ~ServiceServer();
    int port() const { return port_; }
    std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }
    void stop();

private:
    std::unique_ptr<httplib::Server> server_;
    std::string host_;
    int port_ = 0;
    std::thread thread_;
};

}  // namespace cdemap
