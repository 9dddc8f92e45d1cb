#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "saelab/digest.hpp"
#include "saelab/error.hpp"

namespace saelab {

struct Document {
  std::string id;
  std::string text;
};

struct Corpus {
  std::string id;
  std::vector<Document> documents;
  std::string provenance;
  std::vector<std::string> warnings;

  bool empty() const noexcept { return documents.empty(); }
  std::size_t size() const noexcept { return documents.size(); }

  const Document& document(const std::string& doc_id) const {
    for (const auto& d : documents)
      if (d.id == doc_id) return d;
    throw Error(ErrorCode::not_found, "document '" + doc_id + "' not in corpus " + id);
  }
};

enum class CorpusFormat { plain_text, one_doc_per_line, json_lines };

inline CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "plain-text") return CorpusFormat::plain_text;
  if (s == "one-doc-per-line") return CorpusFormat::one_doc_per_line;
  if (s == "json-lines") return CorpusFormat::json_lines;
  throw Error(ErrorCode::config, "unknown corpus format '" + s + "'");
}

inline std::string to_string(CorpusFormat f) {
  switch (f) {
    case CorpusFormat::plain_text: return "plain-text";
    case CorpusFormat::one_doc_per_line: return "one-doc-per-line";
    case CorpusFormat::json_lines: return "json-lines";
  }
  return "?";
}

inline std::string document_id_for(std::string_view text) { return "d" + content_hash(text); }

namespace detail {

inline std::string corpus_id_for(const std::vector<Document>& docs) {
  Digest d;
  d.u64(docs.size());
  for (const auto& doc : docs) d.text(doc.id).text(doc.text);
  return "c" + d.hex();
}

inline std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string line;
  std::istringstream in(text);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

}  // namespace detail

// Builds a corpus from (id, text) pairs. Ids default to the content hash.
// A document whose id was already seen is dropped with a warning, so two
// identical texts without explicit ids collapse into one document.
inline Corpus make_corpus(const std::vector<std::pair<std::string, std::string>>& docs, std::string provenance = {}) {
  Corpus c;
  c.provenance = std::move(provenance);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& [given, text] = docs[i];
    if (detail::blank(text)) {
      c.warnings.push_back("document " + std::to_string(i + 1) + " is empty and was dropped");
      continue;
    }
    std::string id = given.empty() ? document_id_for(text) : given;
    if (!seen.insert(id).second) {
      c.warnings.push_back("document " + std::to_string(i + 1) + " duplicates id " + id + " and was dropped");
      continue;
    }
    c.documents.push_back(Document{std::move(id), text});
  }
  if (c.documents.empty()) c.warnings.push_back("corpus is empty");
  c.id = detail::corpus_id_for(c.documents);
  return c;
}

// plain-text: documents are paragraphs separated by blank lines.
// one-doc-per-line: every line is a document.
// json-lines: objects with a string "text" and an optional "id".
inline Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read corpus file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string content = buf.str();
  const auto lines = detail::split_lines(content);

  std::vector<std::pair<std::string, std::string>> docs;
  switch (format) {
    case CorpusFormat::plain_text: {
      std::string para;
      for (const auto& line : lines) {
        if (detail::blank(line)) {
          if (!para.empty()) docs.emplace_back("", std::move(para));
          para.clear();
        } else {
          if (!para.empty()) para += '\n';
          para += line;
        }
      }
      if (!para.empty()) docs.emplace_back("", std::move(para));
      break;
    }
    case CorpusFormat::one_doc_per_line:
      for (const auto& line : lines) docs.emplace_back("", line);
      break;
    case CorpusFormat::json_lines:
      for (std::size_t n = 0; n < lines.size(); ++n) {
        if (detail::blank(lines[n])) continue;
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(lines[n]);
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCode::ingest, path.string() + " line " + std::to_string(n + 1) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
          throw Error(ErrorCode::ingest,
                      path.string() + " line " + std::to_string(n + 1) + ": expected an object with a string \"text\"");
        std::string id;
        if (j.contains("id")) {
          if (j["id"].is_string()) id = j["id"].get<std::string>();
          else if (j["id"].is_number_integer()) id = std::to_string(j["id"].get<long long>());
          else throw Error(ErrorCode::ingest, path.string() + " line " + std::to_string(n + 1) + ": bad \"id\"");
        }
        docs.emplace_back(std::move(id), j["text"].get<std::string>());
      }
      break;
  }
  return make_corpus(docs, path.filename().string() + " (" + to_string(format) + ")");
}

inline void to_json(nlohmann::json& j, const Corpus& c) {
  j = nlohmann::json{{"schema", "saelab.corpus/1"}, {"id", c.id}, {"provenance", c.provenance}};
  auto& docs = j["documents"] = nlohmann::json::array();
  for (const auto& d : c.documents) docs.push_back({{"id", d.id}, {"text", d.text}});
}

inline void from_json(const nlohmann::json& j, Corpus& c) {
  std::vector<std::pair<std::string, std::string>> docs;
  for (const auto& d : j.at("documents")) docs.emplace_back(d.at("id").get<std::string>(), d.at("text").get<std::string>());
  c = make_corpus(docs, j.value("provenance", std::string{}));
  if (j.contains("id") && j["id"].get<std::string>() != c.id)
    throw Error(ErrorCode::corpus, "stored corpus id does not match its documents");
}

}  // namespace saelab
