#include "ehrlich/text_adapter.hpp"

#include <charconv>
#include <cmath>
#include <csignal>
#include <cstring>
#include <istream>
#include <ostream>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include "ehrlich/instance_io.hpp"

namespace ehrlich {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<Sequence> parse_list(std::string_view s, int vocab_size, int length) {
  s = trim(s);
  if (s.size() < 2 || s.front() != '[' || s.back() != ']') return std::nullopt;
  s = s.substr(1, s.size() - 2);
  Sequence out;
  while (true) {
    s = trim(s);
    Token t = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), t);
    if (res.ec != std::errc{} || t < 0 || t >= vocab_size) return std::nullopt;
    out.push_back(t);
    s.remove_prefix(static_cast<std::size_t>(res.ptr - s.data()));
    s = trim(s);
    if (s.empty()) break;
    if (s.front() != ',') return std::nullopt;
    s.remove_prefix(1);
  }
  if (static_cast<int>(out.size()) != length) return std::nullopt;
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// "key=value" fields of a control line.
std::optional<std::string_view> control_field(std::string_view line, std::string_view key) {
  const std::string pat = std::string(key) + "=";
  const auto pos = line.find(pat);
  if (pos == std::string_view::npos) return std::nullopt;
  auto rest = line.substr(pos + pat.size());
  return rest.substr(0, rest.find(' '));
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

[[noreturn]] void protocol_error(const std::string& detail) {
  throw InvariantError("text-protocol", detail);
}

}  // namespace

std::string format_completion(const Sequence& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::string format_prompt(const Sequence& s) { return "<inc> " + format_completion(s); }

std::optional<Proposal> parse_completion(const std::string& line, int vocab_size, int length) {
  std::string_view s = line;
  std::optional<double> ll;
  if (const auto tab = s.find('\t'); tab != std::string_view::npos) {
    ll = parse_double(s.substr(tab + 1));
    if (!ll || !std::isfinite(*ll)) return std::nullopt;
    s = s.substr(0, tab);
  }
  auto seq = parse_list(s, vocab_size, length);
  if (!seq) return std::nullopt;
  return Proposal{std::move(*seq), ll ? *ll : std::nan("")};
}

std::optional<Sequence> parse_prompt(const std::string& line, int vocab_size, int length) {
  std::string_view s = trim(line);
  if (s.substr(0, 5) != "<inc>") return std::nullopt;
  return parse_list(s.substr(5), vocab_size, length);
}

// Subprocess

SubprocessTransport::SubprocessTransport(const std::vector<std::string>& argv) {
  if (argv.empty()) throw InvariantError("text-protocol", "empty command");
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
    throw SolverAbort(std::string("pipe failed: ") + std::strerror(errno));
  pid_ = fork();
  if (pid_ < 0) throw SolverAbort(std::string("fork failed: ") + std::strerror(errno));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    execvp(args[0], args.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  std::signal(SIGPIPE, SIG_IGN);
}

SubprocessTransport::~SubprocessTransport() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
  }
}

void SubprocessTransport::send(const std::string& line) {
  std::string data = line + "\n";
  const char* p = data.data();
  std::size_t left = data.size();
  while (left > 0) {
    const auto n = write(to_child_, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SolverAbort(std::string("text generator write failed: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

std::optional<std::string> SubprocessTransport::receive() {
  while (true) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const auto n = read(from_child_, chunk, sizeof(chunk));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      if (buffer_.empty()) return std::nullopt;
      std::string line = std::move(buffer_);
      buffer_.clear();
      return line;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

// Client

TextGenerator::TextGenerator(std::shared_ptr<LineTransport> transport, int vocab_size, int length)
    : transport_(std::move(transport)),
      vocab_size_(vocab_size),
      length_(length),
      parse_failures_(std::make_shared<std::int64_t>(0)) {
  if (!transport_) throw InvariantError("text-protocol", "null transport");
}

std::string TextGenerator::expect_line() const {
  auto line = transport_->receive();
  if (!line) throw SolverAbort("text generator closed its output");
  return *line;
}

std::vector<Proposal> TextGenerator::propose(const Sequence& input, double temperature, int count,
                                             std::uint64_t seed) const {
  transport_->send("#temperature=" + format_score(temperature) + " count=" +
                   std::to_string(count) + " seed=" + std::to_string(seed));
  transport_->send(format_prompt(input));
  std::vector<Proposal> out;
  for (int i = 0; i < count; ++i) {
    const auto line = expect_line();
    auto p = parse_completion(line, vocab_size_, length_);
    if (!p) {
      ++*parse_failures_;
      continue;
    }
    out.push_back(std::move(*p));
  }
  for (auto& p : out)
    if (std::isnan(p.log_likelihood)) p.log_likelihood = score_likelihood(input, p.sequence);
  return out;
}

Proposal TextGenerator::greedy(const Sequence& input) const {
  auto props = propose(input, 0.0, 1, 0);
  if (props.empty()) return {input, score_likelihood(input, input)};
  return props.front();
}

double TextGenerator::score_likelihood(const Sequence& input, const Sequence& output) const {
  transport_->send("#score");
  transport_->send(format_prompt(input));
  transport_->send(format_completion(output));
  const auto line = expect_line();
  const auto v = parse_double(line);
  if (!v) throw SolverAbort("text generator sent a malformed score: '" + line + "'");
  return *v;
}

// Server

std::int64_t serve_text_protocol(const ProposalGenerator& generator, int vocab_size, int length,
                                 std::istream& in, std::ostream& out) {
  std::int64_t served = 0;
  std::string line;
  auto next = [&](const char* what) {
    if (!std::getline(in, line)) protocol_error(std::string("missing ") + what);
    return line;
  };
  auto prompt = [&]() {
    const auto s = parse_prompt(next("prompt line"), vocab_size, length);
    if (!s) protocol_error("malformed prompt '" + line + "'");
    return *s;
  };

  while (std::getline(in, line)) {
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (view == "#score") {
      const auto x = prompt();
      const auto y = parse_list(next("completion line"), vocab_size, length);
      if (!y) protocol_error("malformed completion '" + line + "'");
      out << format_score(generator.score_likelihood(x, *y)) << '\n';
    } else if (view.substr(0, 13) == "#temperature=") {
      const auto tf = control_field(view, "temperature");
      const auto nf = control_field(view, "count");
      const auto sf = control_field(view, "seed");
      double temperature = -1.0;
      if (tf) {
        const auto res = std::from_chars(tf->data(), tf->data() + tf->size(), temperature);
        if (res.ec != std::errc{} || res.ptr != tf->data() + tf->size()) temperature = -1.0;
      }
      const auto n = nf ? parse_u64(*nf) : std::nullopt;
      const auto seed = sf ? parse_u64(*sf) : std::optional<std::uint64_t>(0);
      if (!(temperature >= 0.0) || !n || !seed)
        protocol_error("malformed control line '" + line + "'");
      const auto x = prompt();
      const int count = static_cast<int>(*n);
      std::vector<Proposal> props;
      if (temperature == 0.0)
        props.assign(static_cast<std::size_t>(count), generator.greedy(x));
      else
        props = generator.propose(x, temperature, count, *seed);
      for (const auto& p : props)
        out << format_completion(p.sequence) << '\t' << format_score(p.log_likelihood) << '\n';
    } else {
      protocol_error("unknown request '" + line + "'");
    }
    out.flush();
    ++served;
  }
  return served;
}

}  // namespace ehrlich
