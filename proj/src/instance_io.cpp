#include "ehrlich/instance_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace ehrlich {

using Json = nlohmann::ordered_json;

namespace {

template <typename T>
T require(const Json& j, const char* key, const char* invariant = "schema") {
  if (!j.contains(key)) throw InvariantError(invariant, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw InvariantError(invariant, std::string("field '") + key + "': " + e.what());
  }
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string serialize_instance(const EhrlichFunction& f) {
  const auto& p = f.params();
  Json doc;
  doc["version"] = kInstanceFormatVersion;
  doc["name"] = f.name();
  doc["params"] = {{"v", p.vocab_size},
                   {"L", p.length},
                   {"c", p.num_motifs},
                   {"k", p.motif_length},
                   {"q", p.quantization},
                   {"a", p.epistasis},
                   {"tau", p.temperature},
                   {"feasible_fraction", p.feasible_fraction},
                   {"seed", p.seed}};
  doc["transition"] = f.transition().entries;
  Json mask = Json::array();
  for (const auto m : f.transition().mask) mask.push_back(m != 0);
  doc["mask"] = std::move(mask);
  doc["motifs"] = f.motifs().motifs;
  doc["offsets"] = f.motifs().offsets;
  doc["optimum"] = f.optimum();
  return doc.dump(1) + "\n";
}

EhrlichFunction parse_instance(const std::string& document) {
  Json doc;
  try {
    doc = Json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvariantError("json", e.what());
  }
  if (!doc.is_object()) throw InvariantError("schema", "instance document must be an object");
  const int version = require<int>(doc, "version");
  if (version != kInstanceFormatVersion)
    throw InvariantError("version", "unsupported format version " + std::to_string(version));

  const Json& pj = doc.contains("params") ? doc.at("params") : Json();
  if (!pj.is_object()) throw InvariantError("schema", "missing object 'params'");
  EhrlichParams p;
  p.vocab_size = require<int>(pj, "v");
  p.length = require<int>(pj, "L");
  p.num_motifs = require<int>(pj, "c");
  p.motif_length = require<int>(pj, "k");
  p.quantization = require<int>(pj, "q");
  p.epistasis = require<double>(pj, "a");
  p.temperature = require<double>(pj, "tau");
  p.feasible_fraction = require<double>(pj, "feasible_fraction");
  p.seed = require<std::uint64_t>(pj, "seed");
  p.validate();

  TransitionMatrix t;
  t.size = p.vocab_size;
  t.entries = require<std::vector<double>>(doc, "transition");
  for (const auto b : require<std::vector<bool>>(doc, "mask")) t.mask.push_back(b ? 1 : 0);

  SpacedMotifs m;
  m.motifs = require<std::vector<Sequence>>(doc, "motifs");
  m.offsets = require<std::vector<std::vector<int>>>(doc, "offsets");
  auto optimum = require<Sequence>(doc, "optimum");

  EhrlichFunction f(p, std::move(t), std::move(m), std::move(optimum));
  if (doc.contains("name") && doc.at("name").get<std::string>() != f.name())
    throw InvariantError("name", "document name '" + doc.at("name").get<std::string>() +
                                     "' does not match params " + f.name());
  return f;
}

EhrlichFunction load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvariantError("io", "cannot open instance file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_instance(ss.str());
}

std::vector<SequenceLine> read_sequence_file(std::istream& in, std::optional<int> expected_length) {
  std::vector<SequenceLine> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;

    std::vector<std::pair<std::string, std::size_t>> fields;  // (text, 1-based column)
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      const auto piece = line.substr(start, comma == std::string::npos ? std::string::npos
                                                                        : comma - start);
      const auto lead = piece.find_first_not_of(" \t\r");
      fields.emplace_back(trim(piece), start + (lead == std::string::npos ? 0 : lead) + 1);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }

    auto fail = [&](std::size_t column, const std::string& what) {
      throw InvariantError("sequence-file", "line " + std::to_string(line_no) + ", column " +
                                                std::to_string(column) + ": " + what);
    };

    SequenceLine parsed;
    std::size_t token_fields = fields.size();
    if (expected_length && static_cast<int>(fields.size()) == *expected_length + 1) {
      token_fields = fields.size() - 1;
      const auto& [text, col] = fields.back();
      if (text == "-inf") {
        parsed.score = kInfeasible;
      } else {
        double value = 0.0;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size())
          fail(col, "malformed score '" + text + "'");
        parsed.score = value;
      }
    } else if (expected_length && static_cast<int>(fields.size()) != *expected_length) {
      fail(1, "expected " + std::to_string(*expected_length) + " tokens, got " +
                  std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < token_fields; ++i) {
      const auto& [text, col] = fields[i];
      Token value = 0;
      const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
      if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size())
        fail(col, "malformed token '" + text + "'");
      parsed.tokens.push_back(value);
    }
    out.push_back(std::move(parsed));
  }
  return out;
}

std::string format_sequence(const Sequence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

std::string format_score(double value) {
  if (value == kInfeasible) return "-inf";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (std::isnan(value)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_sequence_line(std::ostream& out, const Sequence& s, std::optional<double> score) {
  out << format_sequence(s);
  if (score) out << ',' << format_score(*score);
  out << '\n';
}

}  // namespace ehrlich
