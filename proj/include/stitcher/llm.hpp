#pragma once

#include <memory>
#include <string>

namespace stitcher {

enum class Domain { Cooking, Woodworking, Gardening };

const char* domain_name(Domain d);
Domain domain_from_name(const std::string& name);

// Prompt templates for step summarization and procedure mixing, one variant
// per domain. render_mix_prompt substitutes the group size; at size 3 the
// rendered text matches the published template exactly.
std::string summarize_system_prompt(Domain domain);
std::string render_summarize_prompt(Domain domain, const std::string& narrations);
std::string mix_system_prompt(Domain domain);
std::string render_mix_prompt(Domain domain, size_t group_size,
                              const std::string& numbered_summaries);

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual std::string complete(const std::string& system, const std::string& user) = 0;
};

// Offline deterministic stand-in. Summarization prompts echo every narration
// line back as a step; mixing prompts interleave the provided summaries
// round-robin, preserving per-source step order.
class MockLlmClient : public LlmClient {
public:
    std::string complete(const std::string& system, const std::string& user) override;
};

struct HttpLlmConfig {
    std::string base_url;  // default from SAD_LLM_URL
    std::string api_key;   // default from SAD_LLM_KEY
    std::string model = "default";
    int max_attempts = 3;
    int backoff_initial_ms = 500;
};

// JSON-over-HTTP chat-completion client. Retries with exponential backoff,
// then raises LlmUnavailable.
class HttpLlmClient : public LlmClient {
public:
    explicit HttpLlmClient(HttpLlmConfig config);
    std::string complete(const std::string& system, const std::string& user) override;

private:
    HttpLlmConfig config_;
};

std::unique_ptr<LlmClient> make_llm_client(const std::string& kind, const std::string& model);

}  // namespace stitcher
