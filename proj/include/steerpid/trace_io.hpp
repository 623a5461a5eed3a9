#pragma once

// Trace files: JSON Lines. The first line is a header object
//
//   {"format":"steerpid-trace","version":1,"dim":64,"chunk_size":24,
//    "pooled":true,"records":N,"config_hash":"..."}
//
// ("records" and "config_hash" are optional). Every following line is one
// record. Pooled files hold one record per chunk:
//
//   {"step":0,"features":[...],"label":"redundant","tokens":24}
//
// Per-token files ("pooled":false) hold one record per token:
//
//   {"step":0,"hidden_state":[...],"label":"required"}
//
// "step" must be strictly increasing; "label" and "tokens" are optional.
// Numbers are written in shortest round-trip form, so a write/read cycle is
// bit-exact.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerpid/artifact_io.hpp"
#include "steerpid/error.hpp"
#include "steerpid/features_classifier.hpp"
#include "steerpid/inference_loop.hpp"

namespace steerpid {

inline constexpr std::string_view kTraceFormat = "steerpid-trace";
inline constexpr int kTraceFormatVersion = 1;

struct TraceHeader {
  std::size_t dim = 0;
  int chunk_size = 24;
  bool pooled = true;
  std::optional<std::size_t> records;
  std::string config_hash;
};

struct Trace {
  TraceHeader header;
  std::vector<TraceRecord> records;
};

namespace detail {

inline RedundancyLabel parse_label(const nlohmann::json& j, std::size_t line) {
  if (!j.is_string()) throw ParseError("\"label\" must be a string", line);
  const auto s = j.get<std::string>();
  if (s == "redundant") return RedundancyLabel::Redundant;
  if (s == "required") return RedundancyLabel::Required;
  throw ParseError("unknown label '" + s + "' (expected required|redundant)", line);
}

inline std::vector<double> parse_vector(const nlohmann::json& j, std::size_t dim, const char* key, std::size_t line) {
  if (!j.is_array()) throw ParseError(std::string("\"") + key + "\" must be an array", line);
  if (j.size() != dim) {
    throw ParseError(std::string("\"") + key + "\" has " + std::to_string(j.size()) + " components, header declares " +
                         std::to_string(dim),
                     line);
  }
  std::vector<double> out;
  out.reserve(dim);
  for (const auto& v : j) {
    if (!v.is_number()) throw ParseError(std::string("\"") + key + "\" contains a non-number", line);
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ParseError(std::string("\"") + key + "\" contains a non-finite value", line);
    out.push_back(d);
  }
  return out;
}

}  // namespace detail

inline std::string serialize_trace(const TraceHeader& header, std::span<const TraceRecord> records) {
  nlohmann::ordered_json h;
  h["format"] = kTraceFormat;
  h["version"] = kTraceFormatVersion;
  h["dim"] = header.dim;
  h["chunk_size"] = header.chunk_size;
  h["pooled"] = header.pooled;
  h["records"] = records.size();
  if (!header.config_hash.empty()) h["config_hash"] = header.config_hash;
  std::ostringstream out;
  out << h.dump() << '\n';
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step_index;
    if (header.pooled) {
      detail::require_same_dim(r.features.size(), header.dim, "serialize_trace");
      j["features"] = r.features;
    } else {
      detail::require(r.hidden_states.size() == 1, "serialize_trace: per-token record needs one hidden state");
      detail::require_same_dim(r.hidden_states.front().size(), header.dim, "serialize_trace");
      j["hidden_state"] = r.hidden_states.front();
    }
    if (r.true_label) j["label"] = to_string(*r.true_label);
    if (r.token_count) j["tokens"] = *r.token_count;
    out << j.dump() << '\n';
  }
  return out.str();
}

inline Trace parse_trace(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  Trace trace;

  auto parse_json = [&](const std::string& s) {
    try {
      return nlohmann::json::parse(s);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), ln);
    }
  };

  if (!std::getline(in, line)) throw ParseError("empty trace file (missing header)", 1);
  ++ln;
  const auto h = parse_json(line);
  if (!h.is_object() || h.value("format", "") != kTraceFormat) throw ParseError("not a steerpid trace header", ln);
  if (h.value("version", -1) != kTraceFormatVersion) throw ParseError("unsupported trace version", ln);
  try {
    const long long dim = h.at("dim").get<long long>();
    if (dim < 1) throw ParseError("header dim must be >= 1", ln);
    trace.header.dim = static_cast<std::size_t>(dim);
    trace.header.chunk_size = h.at("chunk_size").get<int>();
    if (trace.header.chunk_size < 1) throw ParseError("header chunk_size must be >= 1", ln);
    trace.header.pooled = h.at("pooled").get<bool>();
    if (h.contains("records")) trace.header.records = h.at("records").get<std::size_t>();
    if (h.contains("config_hash")) trace.header.config_hash = h.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad trace header: ") + e.what(), ln);
  }

  const char* vec_key = trace.header.pooled ? "features" : "hidden_state";
  while (std::getline(in, line)) {
    ++ln;
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError("blank line inside trace", ln);
    }
    const auto j = parse_json(line);
    if (!j.is_object()) throw ParseError("record must be a JSON object", ln);
    TraceRecord rec;
    if (!j.contains("step") || !j["step"].is_number_unsigned()) throw ParseError("missing or invalid \"step\"", ln);
    rec.step_index = j["step"].get<std::uint64_t>();
    if (!trace.records.empty() && rec.step_index <= trace.records.back().step_index)
      throw ParseError("\"step\" not strictly increasing", ln);
    if (!j.contains(vec_key)) throw ParseError(std::string("missing \"") + vec_key + "\"", ln);
    auto values = detail::parse_vector(j[vec_key], trace.header.dim, vec_key, ln);
    if (trace.header.pooled)
      rec.features = std::move(values);
    else
      rec.hidden_states.push_back(std::move(values));
    if (j.contains("label")) rec.true_label = detail::parse_label(j["label"], ln);
    if (j.contains("tokens")) {
      if (!j["tokens"].is_number_integer() || j["tokens"].get<long long>() < 1)
        throw ParseError("\"tokens\" must be a positive integer", ln);
      rec.token_count = j["tokens"].get<int>();
    }
    trace.records.push_back(std::move(rec));
  }
  if (trace.header.records && *trace.header.records != trace.records.size()) {
    throw ParseError("header declares " + std::to_string(*trace.header.records) + " records but file has " +
                         std::to_string(trace.records.size()) + " (truncated?)",
                     ln + 1);
  }
  return trace;
}

inline void write_trace(const std::string& path, const TraceHeader& header, std::span<const TraceRecord> records) {
  io::write_file(path, serialize_trace(header, records));
}

inline Trace read_trace(const std::string& path) {
  try {
    return parse_trace(io::read_file(path));
  } catch (const ParseError& e) {
    throw e.with_context(path);
  }
}

/// Labeled pooled chunks of a trace (a training data set). Every record must
/// carry a label.
inline std::vector<LabeledChunk> labeled_chunks(const Trace& trace) {
  detail::require(trace.header.pooled, "labeled data must be a pooled trace");
  std::vector<LabeledChunk> out;
  out.reserve(trace.records.size());
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    const auto& r = trace.records[i];
    detail::require(r.true_label.has_value(), "record " + std::to_string(i) + " has no label");
    out.push_back({r.features, *r.true_label});
  }
  return out;
}

}  // namespace steerpid
