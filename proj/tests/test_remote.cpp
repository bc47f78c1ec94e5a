#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <fstream>
#include <thread>

#include "test_support.hpp"

using namespace kbtypo;
using namespace std::chrono_literals;

namespace {

struct Exchange {
  std::string request;
  std::string response;
};

std::vector<Exchange> golden_transcript() {
  std::vector<Exchange> out;
  for (const auto& line : read_lines(fixtures::test_data_path("protocol_v1_transcript.txt"), "transcript")) {
    if (line.starts_with("> ")) out.push_back({line.substr(2), {}});
    else if (line.starts_with("< ")) out.back().response = line.substr(2);
  }
  return out;
}

// Replays recorded responses and records what the client sent.
class ScriptedTransport : public LineTransport {
 public:
  explicit ScriptedTransport(std::vector<Exchange> script) : script_(std::move(script)) {}
  void send_line(std::string_view line) override {
    sent.emplace_back(line);
    pending_.push_back(next_ < script_.size() ? script_[next_++].response : std::string());
  }
  std::string recv_line(std::chrono::milliseconds) override {
    std::string r = pending_.front();
    pending_.erase(pending_.begin());
    return r;
  }
  std::vector<std::string> sent;

 private:
  std::vector<Exchange> script_;
  std::size_t next_ = 0;
  std::vector<std::string> pending_;
};

// Victim whose answers reproduce the golden transcript.
fixtures::FunctionVictim golden_victim() {
  return fixtures::FunctionVictim(
      2,
      [](std::string_view text) -> Prediction {
        if (text.empty()) throw ContractViolation("empty input");
        if (text == "a robustness test") return {1, {0.25, 0.75}};
        return {0, {0.5, 0.5}};
      },
      [](std::string_view text, int gold) {
        GradientReport r;
        const auto seg = tokenize(text, *fixtures::bert_vocab());
        for (const auto& c : seg.components) {
          r.tokens.push_back(c.token);
          r.chunk_index.push_back(static_cast<int>(seg.words[c.word_index].chunk));
        }
        r.component_norms = {0.125, 0.5, 0.25, 0.0625};
        r.loss = -std::log(gold == 1 ? 0.75 : 0.25);
        return r;
      });
}

std::string fake(const std::string& args) { return std::string("stdio:") + KBTYPO_FAKE_SERVER + " " + args; }

std::unique_ptr<RemoteVictim> connect(const std::string& spec, int timeout_ms = 5000) {
  return std::make_unique<RemoteVictim>(VictimEndpoint::parse(spec, timeout_ms));
}

}  // namespace

TEST(Protocol, ClientMatchesGoldenTranscript) {
  const auto script = golden_transcript();
  ASSERT_EQ(script.size(), 5u);
  auto transport = std::make_unique<ScriptedTransport>(script);
  auto* t = transport.get();
  ProtocolClient client(std::move(transport), 1000ms);
  const auto caps = client.handshake();
  EXPECT_EQ(caps.num_classes, 2);
  EXPECT_EQ(caps.tokenizer_id, "bert-base-uncased");
  EXPECT_TRUE(caps.supports_gradients);
  const auto p = client.predict("a robustness test");
  EXPECT_EQ(p.label, 1);
  EXPECT_EQ(p.probs, (std::vector<double>{0.25, 0.75}));
  const auto g = client.grad_norms("a robustness test", 1);
  EXPECT_EQ(g.tokens, (std::vector<std::string>{"a", "robust", "##ness", "test"}));
  EXPECT_EQ(g.chunk_index, (std::vector<int>{0, 1, 1, 2}));
  EXPECT_EQ(g.component_norms, (std::vector<double>{0.125, 0.5, 0.25, 0.0625}));
  EXPECT_DOUBLE_EQ(g.loss, -std::log(0.75));
  EXPECT_EQ(client.predict("don't \"quote\" me\tnow").label, 0);
  EXPECT_THROW(client.predict(""), VictimError);
  ASSERT_EQ(t->sent.size(), script.size());
  for (std::size_t i = 0; i < script.size(); ++i) EXPECT_EQ(t->sent[i], script[i].request);
}

TEST(Protocol, ServerMatchesGoldenTranscript) {
  const auto victim = golden_victim();
  const ProtocolServer server(victim, "bert-base-uncased");
  for (const auto& ex : golden_transcript()) EXPECT_EQ(server.handle_line(ex.request), ex.response);
}

TEST(Protocol, ServerRejectsBadRequests) {
  const auto victim = golden_victim();
  const ProtocolServer server(victim, "x");
  const auto bad = nlohmann::json::parse(server.handle_line("{not json"));
  EXPECT_FALSE(bad["ok"].get<bool>());
  const auto unknown = nlohmann::json::parse(server.handle_line("{\"id\":7,\"op\":\"train\"}"));
  EXPECT_EQ(unknown["id"], 7);
  EXPECT_FALSE(unknown["ok"].get<bool>());
}

TEST(Protocol, RequestIdsStrictlyIncrease) {
  const auto victim = golden_victim();
  const ProtocolServer server(victim, "x");
  auto transport = std::make_unique<LoopbackTransport>([&](std::string_view l) { return server.handle_line(l); });
  auto* t = transport.get();
  RemoteVictim remote(std::move(transport), 1000ms);
  for (int i = 0; i < 5; ++i) remote.predict("some text");
  remote.grad_norms("a robustness test", 1);
  std::int64_t last = 0;
  for (const auto& line : t->sent()) {
    const auto id = nlohmann::json::parse(line)["id"].get<std::int64_t>();
    EXPECT_GT(id, last);
    last = id;
  }
}

TEST(Protocol, MalformedReplyNamesByteOffset) {
  auto transport = std::make_unique<ScriptedTransport>(std::vector<Exchange>{
      {"", "{\"id\":1,\"ok\":true,\"version\":1,\"num_classes\":2,\"tokenizer_id\":\"t\",\"supports_gradients\":true}"},
      {"", "{\"id\":2,\"ok\":tru}"}});
  RemoteVictim remote(std::move(transport), 1000ms);
  try {
    remote.predict("x");
    FAIL() << "expected a protocol error";
  } catch (const VictimError& e) {
    EXPECT_NE(std::string(e.what()).find("byte 17"), std::string::npos) << e.what();
  }
}

TEST(Protocol, HandshakeGating) {
  auto make = [](const std::string& handshake) {
    return std::make_unique<ScriptedTransport>(std::vector<Exchange>{{"", handshake}});
  };
  EXPECT_THROW(RemoteVictim(make(R"({"id":1,"ok":true,"version":2,"num_classes":2,"tokenizer_id":"t","supports_gradients":true})"), 1000ms),
               RemoteError);
  EXPECT_THROW(RemoteVictim(make(R"({"id":1,"ok":true,"version":1,"num_classes":1,"tokenizer_id":"t","supports_gradients":true})"), 1000ms),
               RemoteError);
  EXPECT_THROW(RemoteVictim(make(R"({"id":1,"ok":true,"version":1})"), 1000ms), RemoteError);
  EXPECT_THROW(RemoteVictim(make(R"({"id":1,"ok":false,"error":"busy"})"), 1000ms), RemoteError);
  RemoteVictim ok(make(R"({"id":1,"ok":true,"version":1,"num_classes":2,"tokenizer_id":"t","supports_gradients":false})"), 1000ms);
  EXPECT_EQ(ok.num_classes(), 2);
  EXPECT_FALSE(ok.supports_gradients());
  EXPECT_FALSE(ok.concurrent());
}

TEST(Protocol, EndpointParsing) {
  const auto s = VictimEndpoint::parse("stdio: python3 server.py --port 1");
  EXPECT_EQ(s.transport, VictimEndpoint::Transport::Stdio);
  EXPECT_EQ(s.command, "python3 server.py --port 1");
  const auto t = VictimEndpoint::parse("tcp:localhost:8765", 100);
  EXPECT_EQ(t.host, "localhost");
  EXPECT_EQ(t.port, 8765);
  EXPECT_EQ(t.timeout_ms, 100);
  EXPECT_THROW(VictimEndpoint::parse("http://x"), DataError);
  EXPECT_THROW(VictimEndpoint::parse("tcp:host"), DataError);
  EXPECT_THROW(VictimEndpoint::parse("tcp:host:99999"), DataError);
  EXPECT_THROW(VictimEndpoint::parse("stdio:x", 0), DataError);
}

TEST(StdioTransport, UniformServerGivesMajorityClassRate) {
  auto remote = connect(fake("uniform 2"));
  EXPECT_EQ(remote->num_classes(), 2);
  const auto& dev = fixtures::rt_dev().examples;
  std::size_t zeros = 0;
  for (const auto& ex : dev) zeros += ex.label == 0;
  const auto clean = evaluate_clean(*remote, dev, 4);
  EXPECT_DOUBLE_EQ(clean.clean_accuracy(), static_cast<double>(zeros) / static_cast<double>(dev.size()));
}

TEST(StdioTransport, RoundTripThroughSharedVocabulary) {
  auto remote = connect(fake("uniform 2 " + fixtures::data_path("vocab/bert-base-uncased.txt")));
  const auto g = remote->grad_norms("robustness", 0);
  EXPECT_EQ(g.tokens, (std::vector<std::string>{"robust", "##ness"}));
  EXPECT_EQ(g.chunk_index, (std::vector<int>{0, 0}));
}

TEST(StdioTransport, AttackRunsAgainstRemoteVictim) {
  auto remote = connect(fake("uniform 2"));
  const TypoGenerator typos;
  const auto r = attack(*remote, typos, {"some sentence here", 0},
                        {.budget = 2, .policy = {PolicyKind::MaxGrad, 0}, .sources = SourceSet::all(), .allow_retarget = false});
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.transcript.size(), 2u);
}

TEST(StdioTransport, CapabilityAndVersionChecks) {
  EXPECT_THROW(connect(fake("version 2")), RemoteError);
  auto nograd = connect(fake("nograd 2"));
  const TypoGenerator typos;
  EXPECT_THROW(attack(*nograd, typos, {"some text", 0},
                      {.budget = 1, .policy = {PolicyKind::MaxGrad, 0}, .sources = SourceSet::all(), .allow_retarget = false}),
               ContractViolation);
  EXPECT_NO_THROW(attack(*nograd, typos, {"some text", 0},
                         {.budget = 1, .policy = {PolicyKind::Random, 0}, .sources = SourceSet::all(), .allow_retarget = false}));
}

TEST(StdioTransport, PerExampleFailures) {
  EXPECT_THROW(connect(fake("garbage"))->predict("x"), VictimError);
  EXPECT_THROW(connect(fake("badprobs"))->predict("x"), VictimError);
  EXPECT_THROW(connect(fake("silent"), 200)->predict("x"), VictimError);
  // Errors are confined to the examples they hit.
  auto bad = connect(fake("badprobs"));
  const auto o = evaluate_clean(*bad, {{"a", 0}, {"b", 1}}, 1);
  EXPECT_EQ(o.victim_errors, 2u);
}

TEST(StdioTransport, LateReplyIsDiscarded) {
  auto remote = connect(fake("slow 400"), 150);
  EXPECT_THROW(remote->predict("first"), VictimError);
  std::this_thread::sleep_for(400ms);
  const auto p = remote->predict("second");
  EXPECT_EQ(p.probs.size(), 2u);
}

TEST(StdioTransport, DeadServerIsARemoteError) {
  EXPECT_THROW(connect("stdio:exit 0"), RemoteError);
  EXPECT_THROW(connect("stdio:/nonexistent/server/binary"), RemoteError);
  auto quitter = connect(fake("quit"));
  EXPECT_THROW(quitter->predict("x"), RemoteError);
}

TEST(TcpTransport, ServesOverSocket) {
  const int listener = ::socket(AF_INET, SOCK_STREAM, 0);
  ASSERT_GE(listener, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ASSERT_EQ(::bind(listener, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  ASSERT_EQ(::listen(listener, 1), 0);
  socklen_t len = sizeof addr;
  ::getsockname(listener, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);

  const auto victim = golden_victim();
  const ProtocolServer server(victim, "bert-base-uncased");
  std::thread serve([&] {
    const int fd = ::accept(listener, nullptr, nullptr);
    std::string buf;
    char chunk[512];
    for (ssize_t n; (n = ::read(fd, chunk, sizeof chunk)) > 0;) {
      buf.append(chunk, static_cast<std::size_t>(n));
      for (std::size_t nl; (nl = buf.find('\n')) != std::string::npos;) {
        const auto reply = server.handle_line(buf.substr(0, nl)) + "\n";
        buf.erase(0, nl + 1);
        (void)!::write(fd, reply.data(), reply.size());
      }
    }
    ::close(fd);
  });
  {
    auto remote = connect("tcp:127.0.0.1:" + std::to_string(port));
    EXPECT_EQ(remote->capabilities().tokenizer_id, "bert-base-uncased");
    EXPECT_EQ(remote->predict("a robustness test").label, 1);
    EXPECT_EQ(remote->grad_norms("a robustness test", 1).tokens.size(), 4u);
  }
  serve.join();
  ::close(listener);
}

TEST(TcpTransport, UnreachableFailsFast) {
  const int s = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(s, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
  socklen_t len = sizeof addr;
  ::getsockname(s, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);
  ::close(s);
  EXPECT_THROW(connect("tcp:127.0.0.1:" + std::to_string(port), 500), RemoteError);
}
