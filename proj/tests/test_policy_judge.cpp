#include <gtest/gtest.h>

#include "codetool/judge.hpp"
#include "codetool/policy.hpp"

#include <fstream>

using namespace codetool;

namespace {

Task three_tool_task() {
    Task t;
    t.id = "t1";
    t.query = "Where is the tallest tower?";
    for (const char* n : {"alpha", "beta", "gamma"}) {
        ToolDoc d;
        d.name = n;
        d.description = std::string("tool ") + n;
        d.url_template = std::string("/") + n + "/{q}";
        d.params = {ParamSpec{"q", ParamKind::String, true, "query text"}};
        t.toolset.push_back(d);
    }
    return t;
}

// Chat endpoint answering from a queue of canned (status, content) replies.
struct FakeChat {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mu;
    std::vector<std::pair<int, std::string>> replies;
    std::vector<json> requests;

    FakeChat() {
        server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mu);
            requests.push_back(json::parse(req.body));
            auto [status, content] = replies.empty() ? std::make_pair(500, std::string()) : replies.front();
            if (!replies.empty()) replies.erase(replies.begin());
            res.status = status;
            json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}, {"usage", {{"completion_tokens", 11}}}};
            res.set_content(body.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeChat() {
        server.stop();
        thread.join();
    }
    chat::ChatConfig config() const {
        chat::ChatConfig c;
        c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        c.backoff_ms = 5;
        return c;
    }
};

}  // namespace

TEST(Prompt, DepthZeroHasNoHistorySection) {
    auto p = policy::assemble_prompt(three_tool_task(), {}, "FINAL ANSWER:");
    EXPECT_TRUE(p.history.empty());
    std::string u = p.render_user();
    EXPECT_EQ(u.find("Previous steps"), std::string::npos);
    EXPECT_NE(p.system_instruction.find("FINAL ANSWER:"), std::string::npos);
    EXPECT_NE(p.system_instruction.find("call_tool"), std::string::npos);
    EXPECT_NE(p.system_instruction.find("Print every tool response"), std::string::npos);
}

TEST(Prompt, HistoryInOrderAndUntruncated) {
    std::string big(70000, 'z');
    std::vector<policy::HistoryEntry> h{{"first", "a = 1", "one\n"}, {"second", "print(a)", big}};
    auto p = policy::assemble_prompt(three_tool_task(), h, "FINAL ANSWER:");
    ASSERT_EQ(p.history.size(), 2u);
    std::string u = p.render_user();
    EXPECT_LT(u.find("### Step 1"), u.find("### Step 2"));
    EXPECT_NE(u.find(big), std::string::npos);
    EXPECT_NE(u.find("step 3"), std::string::npos);
}

TEST(Prompt, RendersEveryTool) {
    auto p = policy::assemble_prompt(three_tool_task(), {}, "FINAL ANSWER:");
    int n = 0;
    for (std::size_t pos = 0; (pos = p.tool_docs_rendering.find("\n- ", pos)) != std::string::npos; ++pos) ++n;
    EXPECT_EQ(n + (p.tool_docs_rendering.rfind("- ", 0) == 0), 3);
}

TEST(ParseStep, Examples) {
    auto s = policy::parse_step("I will call X.\n```\ncall_tool(...)\n```", 1);
    EXPECT_EQ(s.thought, "I will call X.");
    EXPECT_EQ(s.code, "call_tool(...)");
    EXPECT_EQ(s.raw_model_output, "I will call X.\n```\ncall_tool(...)\n```");
    EXPECT_EQ(s.token_count, 7);  // whitespace fallback counts the fences
    EXPECT_THROW(policy::parse_step("no fence here", 1), NoCodeBlock);
    auto two = policy::parse_step("t\n```python\nfirst()\n```\nmore\n```python\nsecond()\n```", 2);
    EXPECT_EQ(two.code, "first()");
    EXPECT_EQ(policy::parse_step("```\nx\n```", 1, 99).token_count, 99);
}

TEST(ScriptedMock, VerbatimAndDeterministic) {
    json scen = json::parse(R"J({"entries": [
        {"task_id": "t1", "prefix": [], "texts": ["A\n```\na()\n```", "B\n```\nb()\n```"]},
        {"task_id": "t1", "prefix": ["a()"], "texts": ["C\n```\nc()\n```"]}]})J");
    policy::ScriptedMockBackend m(scen);
    policy::GenerateRequest req;
    req.task_id = "t1";
    req.n = 2;
    auto g = m.generate(req);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(g[0].text, "A\n```\na()\n```");
    EXPECT_EQ(g[1].text, "B\n```\nb()\n```");
    req.n = 3;
    EXPECT_EQ(policy::sample_candidates(m, req, 1).size(), 3u);

    req.committed_codes = {"a()"};
    req.purpose = policy::Purpose::Rollout;
    req.seed = 5;
    auto r1 = m.generate(req), r2 = m.generate(req);
    for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_EQ(r1[i].text, r2[i].text);
    EXPECT_EQ(r1[0].text, "C\n```\nc()\n```");

    req.committed_codes = {"unknown()"};
    req.n = 1;
    EXPECT_NE(m.generate(req)[0].text.find("final_answer('')"), std::string::npos);
}

TEST(ScriptedMock, UnparseableKeepsCount) {
    policy::ScriptedMockBackend m(json::parse(R"J({"entries": [{"task_id": "t", "prefix": [], "texts": ["no code", "ok\n```\nx = 1\n```"]}]})J"));
    policy::GenerateRequest req;
    req.task_id = "t";
    req.n = 4;
    auto c = policy::sample_candidates(m, req, 1);
    ASSERT_EQ(c.size(), 4u);
    EXPECT_FALSE(c[0].parsed);
    EXPECT_TRUE(c[1].parsed);
    EXPECT_FALSE(c[2].parsed);
}

TEST(ScriptedMock, ObservationRefs) {
    std::vector<policy::HistoryEntry> h{{"", "", R"({"city": "Oslo", "temp": 3})"}, {"", "", R"({"temp": 7, "note": "a \"b\""})"}};
    EXPECT_EQ(policy::resolve_observation_refs("{{obs:1:city}} {{obs:2:temp}} {{obs:last:note}}", h), "Oslo 7 a \\\"b\\\"");
    EXPECT_EQ(policy::resolve_observation_refs("{{obs:1:missing}}/{{obs:9:temp}}", h), "unknown/unknown");
}

TEST(ScriptedMock, MalformedScenario) {
    EXPECT_THROW(policy::ScriptedMockBackend(json::parse(R"J({"entries": [{"task_id": "t"}]})J")), MalformedInput);
    EXPECT_THROW(policy::ScriptedMockBackend(json::parse(R"J({"entries": [{"task_id": "t", "texts": []}]})J")), MalformedInput);
}

TEST(RemoteChat, ServerErrorsExhaustRetries) {
    FakeChat fake;
    fake.replies = {{500, ""}, {502, ""}, {503, ""}};
    policy::RemoteChatBackend b(fake.config());
    policy::GenerateRequest req;
    req.prompt = policy::assemble_prompt(three_tool_task(), {}, "FINAL ANSWER:");
    EXPECT_THROW(b.generate(req), BackendUnreachable);
    EXPECT_EQ(fake.requests.size(), 3u);
}

TEST(RemoteChat, RecoversAndReportsTokens) {
    FakeChat fake;
    fake.replies = {{503, ""}, {200, "ok\n```\nprint(1)\n```"}};
    policy::RemoteChatBackend b(fake.config());
    policy::GenerateRequest req;
    req.prompt = policy::assemble_prompt(three_tool_task(), {}, "FINAL ANSWER:");
    auto c = policy::sample_candidates(b, req, 1);
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0].step.code, "print(1)");
    EXPECT_EQ(c[0].step.token_count, 11);
    EXPECT_EQ(fake.requests.back()["messages"][0]["role"], "system");
}

TEST(RemoteChat, Unreachable) {
    chat::ChatConfig c;
    c.base_url = "http://127.0.0.1:1/v1";
    c.backoff_ms = 1;
    c.timeout_s = 1;
    policy::RemoteChatBackend b(c);
    policy::GenerateRequest req;
    EXPECT_THROW(b.generate(req), BackendUnreachable);
}

TEST(Judge, MockRules) {
    judge::MockJudge j;
    Task t;
    t.oracle = AnswerOracle{{{"Paris", false}}, false};
    EXPECT_EQ(j.judge(t, "The capital is Paris").status, AnswerStatus::Solved);
    EXPECT_EQ(j.judge(t, "the capital is paris").status, AnswerStatus::Solved);
    EXPECT_EQ(j.judge(t, "").status, AnswerStatus::Unsolved);
    t.oracle = AnswerOracle{{{"A", false}, {"B", false}}, true};
    EXPECT_EQ(j.judge(t, "only A here").status, AnswerStatus::Unsure);
    EXPECT_EQ(j.judge(t, "nothing").status, AnswerStatus::Unsolved);
    t.oracle = AnswerOracle{{{R"(\btemp(erature)?: \d+)", true}}, false};
    EXPECT_EQ(j.judge(t, "Temperature: 21").status, AnswerStatus::Solved);
    EXPECT_EQ(j.judge(t, "temp: n/a").status, AnswerStatus::Unsolved);
}

TEST(Judge, Sopr) {
    using S = AnswerStatus;
    std::vector<S> mixed{S::Solved, S::Unsure, S::Unsolved, S::Solved};
    EXPECT_DOUBLE_EQ(judge::sopr(mixed), 0.625);
    std::vector<S> all_solved(3, S::Solved), none(2, S::Unsolved), empty;
    EXPECT_EQ(judge::sopr(all_solved), 1.0);
    EXPECT_EQ(judge::sopr(none), 0.0);
    EXPECT_THROW(judge::sopr(empty), EmptyInput);
    std::vector<S> perm{S::Solved, S::Solved, S::Unsolved, S::Unsure};
    EXPECT_EQ(judge::sopr(mixed), judge::sopr(perm));
}

TEST(Judge, PromptTemplateFileMatchesBuiltIn) {
    std::ifstream in(std::string(CODETOOL_SOURCE_DIR) + "/data/prompts/sopr_judge_v1.txt", std::ios::binary);
    ASSERT_TRUE(in);
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    EXPECT_EQ(file, judge::kJudgePrompt);
}

TEST(Judge, ParseReplies) {
    EXPECT_EQ(judge::parse_judge_reply(R"({"content": "fine", "answer_status": "Solved"})")->first, AnswerStatus::Solved);
    EXPECT_EQ(judge::parse_judge_reply("Sure:\n```json\n{\"answer_status\": \"unsure\"}\n```")->first, AnswerStatus::Unsure);
    EXPECT_EQ(judge::parse_judge_reply(R"({"check_answer_status": {"content": "x", "answer_status": "Unsolved"}})")->first,
              AnswerStatus::Unsolved);
    EXPECT_EQ(judge::parse_judge_reply(R"({"name": "check_answer_status", "arguments": "{\"answer_status\": \"Solved\"}"})")->first,
              AnswerStatus::Solved);
    EXPECT_FALSE(judge::parse_judge_reply("no json"));
    EXPECT_FALSE(judge::parse_judge_reply(R"({"answer_status": "Maybe"})"));
}

TEST(Judge, RemoteRendersPromptAndDegradesToUnsure) {
    FakeChat fake;
    fake.replies = {{200, "garbage"}, {200, R"({"content": "ok", "answer_status": "Solved"})"}};
    judge::RemoteJudge rj(fake.config());
    Task t;
    t.query = "Q?";
    auto j = rj.judge(t, "A.");
    EXPECT_EQ(j.status, AnswerStatus::Solved);
    EXPECT_FALSE(j.audit_flag);
    std::string sent = fake.requests[0]["messages"][0]["content"].get<std::string>();
    EXPECT_EQ(sent, judge::render_prompt(judge::kJudgePrompt, "Q?", "A."));
    EXPECT_NE(sent.find("Query: Q?\n\nAnswer: A.\n"), std::string::npos);

    fake.replies = {{200, "garbage"}, {200, "still garbage"}};
    auto bad = rj.judge(t, "A.");
    EXPECT_EQ(bad.status, AnswerStatus::Unsure);
    EXPECT_TRUE(bad.audit_flag);
    EXPECT_EQ(fake.requests.size(), 4u);
}
