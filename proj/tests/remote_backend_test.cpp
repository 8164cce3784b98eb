#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "edutwin/remote_backend.hpp"
#include "support/fakes.hpp"

using namespace edutwin;
using namespace edutwin::gateway;

namespace {

/// Local chat-completions stand-in; `status` selects the reply.
class FakeEndpoint {
public:
    FakeEndpoint() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            {
                std::lock_guard lock(mutex_);
                last_body = req.body;
                last_auth = req.get_header_value("Authorization");
                ++hits;
            }
            res.status = status;
            if (status == 200) {
                nlohmann::json body{{"choices", {{{"message", {{"role", "assistant"}, {"content", reply}}}}}}};
                res.set_content(body.dump(), "application/json");
            } else {
                res.set_content("{\"error\":\"nope\"}", "application/json");
            }
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeEndpoint() {
        server_.stop();
        thread_.join();
    }
    [[nodiscard]] std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

    int status = 200;
    std::string reply = "5: BB";
    std::string last_body, last_auth;
    int hits = 0;

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::mutex mutex_;
};

ModelRequest sample() { return ModelRequest{"gpt-3.5-turbo", 1, "be a student", "predict", 2, 64}; }

}  // namespace

TEST(Remote, SendsAChatCompletionRequest) {
    FakeEndpoint ep;
    RemoteBackend backend(ep.url(), "sk-test");
    EXPECT_EQ(backend.complete(sample()), "5: BB");
    EXPECT_EQ(ep.last_auth, "Bearer sk-test");
    auto body = nlohmann::json::parse(ep.last_body);
    EXPECT_EQ(body["model"], "gpt-3.5-turbo");
    EXPECT_EQ(body["temperature"], 1.0);
    EXPECT_EQ(body["max_tokens"], 64);
    ASSERT_EQ(body["messages"].size(), 2u);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][1]["content"], "predict");
}

TEST(Remote, MapsStatusCodesToErrorKinds) {
    FakeEndpoint ep;
    RemoteBackend backend(ep.url(), "k");
    ep.status = 503;
    EXPECT_THROW(backend.complete(sample()), TransientError);
    ep.status = 429;
    EXPECT_THROW(backend.complete(sample()), TransientError);
    ep.status = 401;
    EXPECT_THROW(backend.complete(sample()), AuthError);
    ep.status = 400;
    EXPECT_THROW(backend.complete(sample()), BackendUnavailable);
}

TEST(Remote, RetriesThroughTheGateway) {
    FakeEndpoint ep;
    ep.status = 500;
    auto backend = std::make_shared<RemoteBackend>(ep.url(), "k");
    auto opt = fakes::no_sleep();
    opt.retry.max_attempts = 2;
    Gateway gw(backend, nullptr, opt);
    EXPECT_THROW(gw.complete(sample()), BackendUnavailable);
    EXPECT_EQ(ep.hits, 2);
}

TEST(Remote, ConnectionFailureIsTransient) {
    int port = 0;
    {
        httplib::Server s;
        port = s.bind_to_any_port("127.0.0.1");
    }
    RemoteBackend backend("http://127.0.0.1:" + std::to_string(port), "k", 2);
    EXPECT_THROW(backend.complete(sample()), TransientError);
}

TEST(Remote, ResponseShapeChecks) {
    EXPECT_EQ(chat_response_text(R"({"choices":[{"message":{"content":"hi"}}]})"), "hi");
    EXPECT_THROW(chat_response_text("not json"), TransientError);
    EXPECT_THROW(chat_response_text(R"({"choices":[]})"), TransientError);
    EXPECT_THROW(chat_response_text(R"({"choices":[{"message":{"content":null}}]})"), TransientError);
}

TEST(Remote, CredentialsComeFromTheEnvironment) {
    ::unsetenv("EDUTWIN_TEST_KEY");
    EXPECT_THROW(RemoteBackend::from_environment("http://localhost:1", "EDUTWIN_TEST_KEY"), AuthError);
    ::setenv("EDUTWIN_TEST_KEY", "secret", 1);
    EXPECT_NO_THROW(RemoteBackend::from_environment("http://localhost:1", "EDUTWIN_TEST_KEY"));
    ::unsetenv("EDUTWIN_TEST_KEY");
}

TEST(Endpoint, ParsesBaseAndPath) {
    auto e = Endpoint::parse("https://api.example.com/v1/chat/completions");
    EXPECT_EQ(e.base, "https://api.example.com");
    EXPECT_EQ(e.path, "/v1/chat/completions");
    EXPECT_EQ(Endpoint::parse("http://localhost:8080").path, "/v1/chat/completions");
    EXPECT_THROW(Endpoint::parse("localhost"), ConfigError);
    EXPECT_THROW(Endpoint::parse("ftp://x/y"), ConfigError);
    EXPECT_THROW(Endpoint::parse("http:///path"), ConfigError);
}
