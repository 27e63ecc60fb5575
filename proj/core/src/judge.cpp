#include "sspo/judge.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <string>

#include <json.hpp>

#include "sspo/errors.hpp"
#include "sspo/reward.hpp"

namespace sspo {

namespace {

struct FdGuard {
  int fd = -1;
  ~FdGuard() {
    if (fd >= 0) ::close(fd);
  }
};

std::string exchange_line(const std::string& host, const std::string& port,
                          const std::string& request) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &result) != 0 || result == nullptr) {
    throw JudgeTransportError("cannot resolve judge endpoint " + host + ":" + port);
  }

  FdGuard sock;
  const addrinfo* rp = result;
  for (; rp != nullptr; rp = rp->ai_next) {
    sock.fd = ::socket(rp->ai_family, rp->ai_socktype, rp->ai_protocol);
    if (sock.fd < 0) continue;
    if (::connect(sock.fd, rp->ai_addr, rp->ai_addrlen) == 0) break;
    ::close(sock.fd);
    sock.fd = -1;
  }
  ::freeaddrinfo(result);
  if (rp == nullptr || sock.fd < 0) {
    throw JudgeTransportError("cannot connect to judge at " + host + ":" + port);
  }

  timeval timeout{30, 0};
  ::setsockopt(sock.fd, SOL_SOCKET, SO_RCVTIMEO, &timeout, sizeof(timeout));
  ::setsockopt(sock.fd, SOL_SOCKET, SO_SNDTIMEO, &timeout, sizeof(timeout));

  std::string payload = request + "\n";
  std::size_t sent = 0;
  while (sent < payload.size()) {
    const ssize_t n = ::send(sock.fd, payload.data() + sent, payload.size() - sent, 0);
    if (n <= 0) throw JudgeTransportError("failed sending judge request");
    sent += static_cast<std::size_t>(n);
  }

  std::string response;
  char buf[4096];
  while (response.find('\n') == std::string::npos) {
    const ssize_t n = ::recv(sock.fd, buf, sizeof(buf), 0);
    if (n < 0) throw JudgeTransportError("failed reading judge response");
    if (n == 0) break;  // peer closed; accept a terminator-free final line
    response.append(buf, static_cast<std::size_t>(n));
    if (response.size() > 1 << 20) {
      throw JudgeProtocolError("judge response exceeds 1 MiB");
    }
  }
  if (const auto nl = response.find('\n'); nl != std::string::npos) {
    response.resize(nl);
  }
  if (response.empty()) throw JudgeTransportError("judge closed the connection without a response");
  return response;
}

double extract_score(const nlohmann::json& j, const char* field) {
  const auto it = j.find(field);
  if (it == j.end() || !it->is_number()) {
    throw JudgeProtocolError(std::string("judge response missing numeric field '") + field + "'");
  }
  const double v = it->get<double>();
  if (v < 0.0 || v > 100.0) {
    throw JudgeRangeError(std::string("judge score '") + field + "' outside [0, 100]: " +
                          std::to_string(v));
  }
  return v;
}

}  // namespace

std::string_view judge_source_name(JudgeSource s) {
  switch (s) {
    case JudgeSource::local_rule:
      return "local_rule";
    case JudgeSource::remote_judge:
      return "remote_judge";
    case JudgeSource::stub:
      return "stub";
  }
  return "stub";
}

JudgeScores judge_request(const StructuredTrace& trace, const LabelSet& truth,
                          const std::string& endpoint) {
  if (endpoint == "stub" || endpoint == "local") {
    JudgeScores scores;
    scores.ssv = structure_reward(trace) == 1.0 ? 100.0 : 0.0;
    scores.gtfa = scores.sd = scores.dlc = scores.es = 50.0;
    scores.source = endpoint == "stub" ? JudgeSource::stub : JudgeSource::local_rule;
    return scores;
  }

  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 >= endpoint.size()) {
    throw JudgeTransportError("judge endpoint must be 'stub', 'local', or host:port, got '" +
                              endpoint + "'");
  }

  const nlohmann::json request = {{"trace", canonical_serialize(trace)},
                                  {"truth", truth.sorted()},
                                  {"rubric_version", std::string(kJudgeRubricVersion)}};
  const std::string response_line =
      exchange_line(endpoint.substr(0, colon), endpoint.substr(colon + 1), request.dump());

  nlohmann::json response;
  try {
    response = nlohmann::json::parse(response_line);
  } catch (const nlohmann::json::exception& e) {
    throw JudgeProtocolError("malformed judge response: " + std::string(e.what()));
  }
  if (!response.is_object()) throw JudgeProtocolError("judge response is not an object");

  JudgeScores scores;
  scores.ssv = extract_score(response, "ssv");
  scores.gtfa = extract_score(response, "gtfa");
  scores.sd = extract_score(response, "sd");
  scores.dlc = extract_score(response, "dlc");
  scores.es = extract_score(response, "es");
  scores.source = JudgeSource::remote_judge;
  return scores;
}

}  // namespace sspo
