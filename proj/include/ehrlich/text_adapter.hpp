#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ehrlich/llome.hpp"

namespace ehrlich {

// Line protocol for an external text generator. Client to server:
//
//   #temperature=<t> count=<n> seed=<s>
//   <inc> [t1, t2, ...]
//     -> n lines "[t1, t2, ...]" optionally followed by "\t<loglik>"
//
//   #score
//   <inc> [t1, t2, ...]
//   [u1, u2, ...]
//     -> one line "<loglik>"
//
// Greedy decoding is a request with temperature=0 and count=1.

/// "<inc> [3, 1, 5]"
std::string format_prompt(const Sequence& s);
/// "[3, 1, 5]"
std::string format_completion(const Sequence& s);

/// Parses a bracketed completion, with an optional tab-separated loglik.
/// Returns nullopt on any syntax error, wrong length or out-of-range token.
std::optional<Proposal> parse_completion(const std::string& line, int vocab_size, int length);
/// Parses "<inc> [..]"; nullopt when malformed.
std::optional<Sequence> parse_prompt(const std::string& line, int vocab_size, int length);

class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send(const std::string& line) = 0;
  /// nullopt on end of stream.
  virtual std::optional<std::string> receive() = 0;
};

/// Spawns argv[0] with pipes on stdin/stdout.
class SubprocessTransport final : public LineTransport {
 public:
  explicit SubprocessTransport(const std::vector<std::string>& argv);
  ~SubprocessTransport() override;
  SubprocessTransport(const SubprocessTransport&) = delete;
  SubprocessTransport& operator=(const SubprocessTransport&) = delete;

  void send(const std::string& line) override;
  std::optional<std::string> receive() override;

 private:
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

/// Proposal generator backed by a text process. Unparseable completions are
/// dropped and counted; a completion without a loglik is scored with #score.
class TextGenerator final : public ProposalGenerator {
 public:
  TextGenerator(std::shared_ptr<LineTransport> transport, int vocab_size, int length);

  std::string name() const override { return "text"; }
  Proposal greedy(const Sequence& input) const override;
  std::vector<Proposal> propose(const Sequence& input, double temperature, int count,
                                std::uint64_t seed) const override;
  double score_likelihood(const Sequence& input, const Sequence& output) const override;

  std::int64_t parse_failures() const { return *parse_failures_; }

 private:
  std::string expect_line() const;

  std::shared_ptr<LineTransport> transport_;
  int vocab_size_;
  int length_;
  std::shared_ptr<std::int64_t> parse_failures_;
};

/// Answers protocol requests from `in` with `generator` until end of input.
/// Returns the number of requests served. Malformed requests throw
/// InvariantError("text-protocol", ...).
std::int64_t serve_text_protocol(const ProposalGenerator& generator, int vocab_size, int length,
                                 std::istream& in, std::ostream& out);

}  // namespace ehrlich
