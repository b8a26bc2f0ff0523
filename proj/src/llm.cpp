#include "stitcher/llm.hpp"

#include <chrono>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "stitcher/error.hpp"

namespace stitcher {

const char* domain_name(Domain d) {
    switch (d) {
        case Domain::Cooking: return "cooking";
        case Domain::Woodworking: return "woodworking";
        case Domain::Gardening: return "gardening";
    }
    return "cooking";
}

Domain domain_from_name(const std::string& name) {
    if (name == "cooking") return Domain::Cooking;
    if (name == "woodworking") return Domain::Woodworking;
    if (name == "gardening") return Domain::Gardening;
    raise(ErrorCode::MalformedInput, "unknown domain '" + name + "'");
}

// --- prompt templates -------------------------------------------------------

namespace {

const char* kSummarizeSystem[3] = {
    "Help summarize the steps of this recipe whose narrations with timestamps are given. "
    "Timestamp is given in seconds.",
    "Help summarize the steps of this woodworking project whose narrations with timestamps are "
    "given. Timestamp is given in seconds.",
    "Help summarize the steps of this gardening project whose narrations with timestamps are "
    "given. Timestamp is given in seconds.",
};

const char* kSummarizeUser[3] = {
    "Given the narrations and the timestamp of a video in the format '[start_time-end_time] "
    "narration text', tell the recipe being made in this video and list down the steps required "
    "to complete this recipe. \n For each step, list down the timestamp of the corresponding "
    "narrations that best describe the step. Do not list the introduction, explanation, or "
    "comment as a step. Answer in this format: 'Recipe: Name of the recipe and brief detail.\n\n "
    "Step 1: [start_time-end_time] description of the step\n\n Step 2: [start_time-end_time] "
    "description of the step and so on.'. Here are narrations:\n\n",
    "Given the narrations and the timestamp of a video in the format '[start_time-end_time] "
    "narration text', tell the woodworking project being made in this video and list down the "
    "steps required to complete this project. \n For each step, list down the timestamp of the "
    "corresponding narrations that best describe the step. Do not list the introduction, "
    "explanation, or comment as a step. Answer in this format: 'Project: Name of the project and "
    "brief detail.\n\n Step 1: [start_time-end_time] description of the step\n\n Step 2: "
    "[start_time-end_time] description of the step and so on.'. Here are narrations:\n\n",
    "Given the narrations and the timestamp of a video in the format '[start_time-end_time] "
    "narration text', tell the gardening project being made in this video and list down the "
    "steps required to complete this project. \n For each step, list down the timestamp of the "
    "corresponding narrations that best describe the step. Do not list the introduction, "
    "explanation, or comment as a step. Answer in this format: 'Project: Name of the project and "
    "brief detail.\n\n Step 1: [start_time-end_time] description of the step\n\n Step 2: "
    "[start_time-end_time] description of the step and so on.'. Here are narrations:\n\n",
};

const char* kMixSystem[3] = {
    "Generate a new recipe by combining steps from different recipes.",
    "Generate a new woodworking plan by selecting steps from different project instructions.",
    "Generate a new gardening plan by selecting steps from different project instructions.",
};

// {N} is the group size; the published wording uses 3.
const char* kMixUser[3] = {
    "You are tasked with creating a new recipe by combining steps from {N} provided recipe "
    "summaries. Your goal is to seamlessly integrate steps from each recipe, switching between "
    "them only when necessary due to differences in ingredients, techniques, or tools. Ensure "
    "that you do not introduce any new ingredients or steps beyond what is outlined in the "
    "summaries. Also, make sure to use at least one step from all recipes. Answer 'Not Possible' "
    "if this is not possible. Format your response as follows: \n\n Step 1 (Step _ in Recipe _): "
    "[Description of the step] \n\n Step 2 (Step _ in Recipe _): [Description of the step]\n\n "
    "... \n\n Step t (Step _ in Recipe _): [Description of the step] \n\n Explanation: [Any "
    "explanation that you want to provide] \n\n Here are the procedures:\n\n",
    "You are tasked with creating a new woodworking plan by selecting steps from {N} provided "
    "project summaries. Your goal is to seamlessly integrate steps from each plan, switching "
    "between them only when necessary due to differences in materials, joinery methods, or "
    "tools. Ensure that you do not introduce any new materials, techniques, or steps beyond what "
    "is outlined in the summaries. Also, make sure to use at least one step from all project "
    "summaries. Answer 'Not Possible' if this cannot be done. Format your response as follows: "
    "\n\n Step 1 (Step _ in Project _ ): [Description of the step] \n\n Step 2 (Step _ in "
    "Project _): [Description of the step] \n\n ... \n\n Step t (Step t in Project _ ): "
    "[Description of the step] \n\n Explanation: [Any explanation that you want to provide] \n\n "
    "Here are the projects:\n\n",
    "You are tasked with creating a new gardening plan by selecting steps from {N} provided "
    "project summaries. Your goal is to seamlessly integrate steps from each plan, switching "
    "between them only when necessary due to differences in plants, soil preparation methods, or "
    "tools. Ensure that you do not introduce any new plants, techniques, or steps beyond what is "
    "outlined in the summaries. Also, make sure to use at least one step from all project "
    "summaries. Answer 'Not Possible' if this cannot be done. Format your response as follows: "
    "\n\n Step 1 (Step _ in Project _ ): [Description of the step]\n\n Step 2 (Step _ in Project "
    "_): [Description of the step] \n\n ... \n\n Step t (Step t in Project _ ): [Description of "
    "the step] \n\n Explanation: [Any explanation that you want to provide] \n\n Here are the "
    "projects:\n\n",
};

std::string replace_count(std::string text, size_t n) {
    auto pos = text.find("{N}");
    if (pos != std::string::npos) text.replace(pos, 3, std::to_string(n));
    return text;
}

}  // namespace

std::string summarize_system_prompt(Domain domain) {
    return kSummarizeSystem[static_cast<int>(domain)];
}

std::string render_summarize_prompt(Domain domain, const std::string& narrations) {
    return std::string(kSummarizeUser[static_cast<int>(domain)]) + narrations;
}

std::string mix_system_prompt(Domain domain) { return kMixSystem[static_cast<int>(domain)]; }

std::string render_mix_prompt(Domain domain, size_t group_size,
                              const std::string& numbered_summaries) {
    return replace_count(kMixUser[static_cast<int>(domain)], group_size) + numbered_summaries;
}

// --- mock client --------------------------------------------------------------

namespace {

bool is_cooking_prompt(const std::string& system) {
    return system.find("recipe") != std::string::npos;
}

// Lines of the form "[a-b] text" after the trailing prompt preamble.
std::vector<std::string> narration_lines(const std::string& user) {
    std::vector<std::string> lines;
    std::istringstream in(user);
    std::string line;
    static const std::regex pat(R"(^\s*\[[0-9.]+\s*-\s*[0-9.]+\]\s*.+$)");
    while (std::getline(in, line))
        if (std::regex_match(line, pat)) lines.push_back(line);
    return lines;
}

std::string mock_summarize(const std::string& system, const std::string& user) {
    std::string label = is_cooking_prompt(system) ? "Recipe" : "Project";
    std::ostringstream out;
    out << label << ": Mock summary of the narrated procedure.\n";
    size_t k = 0;
    for (const std::string& line : narration_lines(user)) {
        size_t close = line.find(']');
        std::string times = line.substr(line.find('[') + 1, close - line.find('[') - 1);
        std::string text = line.substr(close + 1);
        size_t start = text.find_first_not_of(' ');
        if (start != std::string::npos) text = text.substr(start);
        out << "Step " << ++k << ": [" << times << "] " << text << "\n";
    }
    if (k == 0) return "Not Possible";
    return out.str();
}

std::string mock_mix(const std::string& system, const std::string& user) {
    std::string label = system.find("recipe") != std::string::npos ? "Recipe" : "Project";
    // Parse "<label> <i>:" blocks followed by "Step j: [a-b] text" lines.
    std::vector<std::vector<std::string>> sources;  // per source, raw step texts
    std::istringstream in(user);
    std::string line;
    const std::regex header(label + R"(\s+(\d+)\s*:.*)");
    const std::regex step(R"(^\s*Step\s+(\d+)\s*:\s*\[[0-9.]+\s*-\s*[0-9.]+\]\s*(.+)$)");
    std::smatch m;
    while (std::getline(in, line)) {
        if (std::regex_match(line, m, header)) {
            sources.emplace_back();
        } else if (!sources.empty() && std::regex_match(line, m, step)) {
            sources.back().push_back(m[2].str());
        }
    }
    for (const auto& s : sources)
        if (s.empty()) return "Not Possible";
    if (sources.size() < 2) return "Not Possible";

    // Round-robin interleave, respecting per-source order.
    std::ostringstream out;
    std::vector<size_t> cursor(sources.size(), 0);
    size_t total = 0;
    for (const auto& s : sources) total += s.size();
    size_t t = 0, src = 0;
    while (t < total) {
        if (cursor[src] < sources[src].size()) {
            ++t;
            out << "Step " << t << " (Step " << (cursor[src] + 1) << " in " << label << " "
                << (src + 1) << "): " << sources[src][cursor[src]] << "\n";
            ++cursor[src];
        }
        src = (src + 1) % sources.size();
    }
    out << "Explanation: Steps interleaved round-robin across the provided summaries.\n";
    return out.str();
}

}  // namespace

std::string MockLlmClient::complete(const std::string& system, const std::string& user) {
    if (system.find("Help summarize") != std::string::npos) return mock_summarize(system, user);
    if (system.find("Generate a new") != std::string::npos) return mock_mix(system, user);
    raise(ErrorCode::LlmFormatError, "mock client got an unrecognized prompt");
}

// --- http client ----------------------------------------------------------------

HttpLlmClient::HttpLlmClient(HttpLlmConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty()) {
        const char* env = std::getenv("SAD_LLM_URL");
        if (env) config_.base_url = env;
    }
    if (config_.api_key.empty()) {
        const char* env = std::getenv("SAD_LLM_KEY");
        if (env) config_.api_key = env;
    }
    if (config_.base_url.empty())
        raise(ErrorCode::LlmUnavailable, "no LLM endpoint; set SAD_LLM_URL or use --llm mock");
}

std::string HttpLlmClient::complete(const std::string& system, const std::string& user) {
    nlohmann::json payload = {
        {"model", config_.model},
        {"messages",
         {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}}};
    std::string body = payload.dump();

    int delay_ms = config_.backoff_initial_ms;
    std::string last_error;
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
            delay_ms *= 2;
        }
        httplib::Client client(config_.base_url);
        client.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (!config_.api_key.empty())
            headers.emplace("Authorization", "Bearer " + config_.api_key);
        auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
        if (!res) {
            last_error = "connection failed";
            continue;
        }
        if (res->status != 200) {
            last_error = "status " + std::to_string(res->status);
            continue;
        }
        try {
            auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            raise(ErrorCode::LlmFormatError,
                  std::string("unexpected completion payload: ") + e.what());
        }
    }
    raise(ErrorCode::LlmUnavailable, "LLM unreachable after " +
                                         std::to_string(config_.max_attempts) + " attempts (" +
                                         last_error + ")");
}

std::unique_ptr<LlmClient> make_llm_client(const std::string& kind, const std::string& model) {
    if (kind == "mock") return std::make_unique<MockLlmClient>();
    if (kind == "http") {
        HttpLlmConfig cfg;
        cfg.model = model;
        return std::make_unique<HttpLlmClient>(std::move(cfg));
    }
    raise(ErrorCode::MalformedInput, "unknown llm client kind '" + kind + "'");
}

}  // namespace stitcher
