#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "saelab/diagnostics/diagnostics.hpp"
#include "saelab/error.hpp"

namespace saelab {

enum class ReportFormat { html, markdown, csv, json };

inline std::string to_string(ReportFormat f) {
  switch (f) {
    case ReportFormat::html: return "html";
    case ReportFormat::markdown: return "markdown";
    case ReportFormat::csv: return "csv";
    case ReportFormat::json: return "json";
  }
  return "?";
}

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "html") return ReportFormat::html;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  throw Error(ErrorCode::render, "unknown report format '" + s + "'");
}

struct RenderSpec {
  ReportFormat format = ReportFormat::html;
  // Shading colour; intensity is carried by the alpha channel only.
  int red = 255, green = 0, blue = 0;
  bool escape_html = true;      // turning this off is only safe for trusted text
  std::string series_prefix = "sweep";
};

struct RenderedDocument {
  std::string content;
  std::map<std::string, std::string> files;  // auxiliary outputs keyed by file name
};

// ------------------------------------------------------------------ helpers

namespace detail {

// Shortest decimal string that parses back to the same double.
inline std::string full_precision(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw Error(ErrorCode::render, "not a number: '" + std::string(s) + "'");
  return v;
}

inline std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string markdown_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': case '`': case '*': case '_': case '[': case ']': case '#': case '|': case '!':
        out += '\\';
        out += c;
        break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '\n': out += "<br>"; break;
      case '\r': break;
      default: out += c;
    }
  }
  return out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// RFC 4180 records; quoted fields may span lines.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw Error(ErrorCode::render, "unterminated quoted csv field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string rgba(const RenderSpec& spec, double alpha) {
  return "rgba(" + std::to_string(spec.red) + "," + std::to_string(spec.green) + "," + std::to_string(spec.blue) + "," +
         fixed(alpha, 3) + ")";
}

inline std::string text_escape(const RenderSpec& spec, std::string_view s) {
  return spec.escape_html ? html_escape(s) : std::string(s);
}

inline std::string html_page(const std::string& title, const std::string& body) {
  return "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" + html_escape(title) +
         "</title>\n<style>\n"
         "body{font-family:sans-serif}\n"
         "table{border-collapse:collapse}\n"
         "td,th{border:1px solid #ccc;padding:2px 6px;text-align:right}\n"
         ".highlight{white-space:pre-wrap;font-family:monospace}\n"
         "</style>\n</head>\n<body>\n" +
         body + "</body>\n</html>\n";
}

inline std::string join_csv(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  return out + "\n";
}

}  // namespace detail

// ---------------------------------------------------------------- highlight

inline void validate_highlight(const HighlightResult& h) {
  for (const auto& row : h.rows) {
    if (!std::isfinite(row.opacity) || row.opacity < 0.0 || row.opacity > 1.0)
      throw Error(ErrorCode::render, "opacity " + detail::full_precision(row.opacity) + " of token '" + row.token +
                                         "' is outside [0, 1]");
    if (!row.is_bos && (row.span.end < row.span.begin || row.span.end > h.text.size()))
      throw Error(ErrorCode::render, "token span is outside the highlighted text");
  }
}

// Tokens with zero opacity are written as plain text; every other token gets
// one span shaded by its opacity. Text comes from the source spans, so
// multi-byte characters are never split by the renderer.
inline RenderedDocument render_highlight(const HighlightResult& h, const RenderSpec& spec = {}) {
  validate_highlight(h);
  RenderedDocument doc;
  auto token_text = [&](const HighlightRow& row) {
    return std::string_view(h.text).substr(row.span.begin, row.span.end - row.span.begin);
  };
  switch (spec.format) {
    case ReportFormat::html: {
      std::string body = "<h1>Feature " + h.feature.str() + "</h1>\n<p>max activation " +
                         detail::fixed(h.max_activation) + ", begin-of-text activation " +
                         detail::fixed(h.bos_activation) + "</p>\n<p class=\"highlight\">";
      for (const auto& row : h.rows) {
        if (row.is_bos) continue;
        const auto esc = detail::text_escape(spec, token_text(row));
        if (row.opacity == 0.0) {
          body += esc;
        } else {
          body += "<span style=\"background-color:" + detail::rgba(spec, row.opacity) + "\" title=\"" +
                  detail::fixed(row.activation, 4) + "\">" + esc + "</span>";
        }
      }
      body += "</p>\n";
      doc.content = detail::html_page("Feature " + h.feature.str(), body);
      break;
    }
    case ReportFormat::markdown: {
      doc.content = "# Feature " + h.feature.str() + "\n\n| position | token | activation | opacity |\n|---:|---|---:|---:|\n";
      for (std::size_t p = 0; p < h.rows.size(); ++p) {
        const auto& row = h.rows[p];
        const std::string tok = row.is_bos ? "&lt;begin-of-text&gt;" : detail::markdown_escape(token_text(row));
        doc.content += "| " + std::to_string(p) + " | " + tok + " | " + detail::fixed(row.activation, 4) + " | " +
                       detail::fixed(row.opacity, 3) + " |\n";
      }
      break;
    }
    case ReportFormat::csv: {
      doc.content = detail::join_csv({"position", "token", "begin", "end", "activation", "opacity", "bos"});
      for (std::size_t p = 0; p < h.rows.size(); ++p) {
        const auto& row = h.rows[p];
        doc.content += detail::join_csv({std::to_string(p), row.is_bos ? row.token : std::string(token_text(row)),
                                         std::to_string(row.span.begin), std::to_string(row.span.end),
                                         detail::full_precision(row.activation), detail::full_precision(row.opacity),
                                         row.is_bos ? "1" : "0"});
      }
      break;
    }
    case ReportFormat::json: doc.content = to_json(h).dump(2) + "\n"; break;
  }
  return doc;
}

// ---------------------------------------------------------------- confusion

inline void validate_confusion(const ConfusionMatrix& m) {
  if (m.values.size() != m.features.size())
    throw Error(ErrorCode::render, "confusion matrix has " + std::to_string(m.values.size()) + " rows for " +
                                       std::to_string(m.features.size()) + " features");
  for (const auto& row : m.values) {
    if (row.size() != m.categories.size()) throw Error(ErrorCode::render, "confusion matrix row width mismatch");
    for (double v : row)
      if (!std::isfinite(v)) throw Error(ErrorCode::render, "confusion matrix has a non-finite cell");
  }
  if (!m.descriptions.empty() && m.descriptions.size() != m.features.size())
    throw Error(ErrorCode::render, "confusion matrix descriptions do not match its features");
}

inline RenderedDocument render_confusion(const ConfusionMatrix& m, const RenderSpec& spec = {}) {
  validate_confusion(m);
  RenderedDocument doc;
  double peak = 0.0;
  for (const auto& row : m.values)
    for (double v : row) peak = std::max(peak, v);
  auto description = [&](std::size_t i) { return m.descriptions.empty() ? std::string() : m.descriptions[i]; };
  switch (spec.format) {
    case ReportFormat::html: {
      std::string body = "<h1>Feature confusion matrix</h1>\n<table>\n<tr><th>feature</th><th>description</th>";
      for (const auto& c : m.categories) body += "<th>" + detail::text_escape(spec, c) + "</th>";
      body += "</tr>\n";
      for (std::size_t f = 0; f < m.features.size(); ++f) {
        body += "<tr><th>" + m.features[f].str() + "</th><td>" + detail::text_escape(spec, description(f)) + "</td>";
        for (double v : m.values[f]) {
          const double alpha = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
          body += "<td style=\"background-color:" + detail::rgba(spec, alpha) + "\">" + detail::fixed(v) + "</td>";
        }
        body += "</tr>\n";
      }
      body += "</table>\n";
      doc.content = detail::html_page("Feature confusion matrix", body);
      break;
    }
    case ReportFormat::markdown: {
      doc.content = "| feature | description |";
      for (const auto& c : m.categories) doc.content += " " + detail::markdown_escape(c) + " |";
      doc.content += "\n|---|---|";
      for (std::size_t c = 0; c < m.categories.size(); ++c) doc.content += "---:|";
      doc.content += "\n";
      for (std::size_t f = 0; f < m.features.size(); ++f) {
        doc.content += "| " + m.features[f].str() + " | " + detail::markdown_escape(description(f)) + " |";
        for (double v : m.values[f]) doc.content += " " + detail::fixed(v) + " |";
        doc.content += "\n";
      }
      break;
    }
    case ReportFormat::csv: {
      std::vector<std::string> header{"feature", "description"};
      header.insert(header.end(), m.categories.begin(), m.categories.end());
      doc.content = detail::join_csv(header);
      for (std::size_t f = 0; f < m.features.size(); ++f) {
        std::vector<std::string> row{m.features[f].str(), description(f)};
        for (double v : m.values[f]) row.push_back(detail::full_precision(v));
        doc.content += detail::join_csv(row);
      }
      break;
    }
    case ReportFormat::json: doc.content = to_json(m).dump(2) + "\n"; break;
  }
  return doc;
}

// Reads the csv rendering back. Only the displayed quantities survive
// (features, descriptions, categories, values); the normalization trace does
// not.
inline ConfusionMatrix parse_confusion_csv(std::string_view text) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "feature" || rows[0][1] != "description")
    throw Error(ErrorCode::render, "not a confusion-matrix csv");
  ConfusionMatrix m;
  m.categories.assign(rows[0].begin() + 2, rows[0].end());
  bool any_description = false;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw Error(ErrorCode::render, "csv row " + std::to_string(r) + " has wrong width");
    m.features.push_back(FeatureId::parse(rows[r][0]));
    m.descriptions.push_back(rows[r][1]);
    any_description = any_description || !rows[r][1].empty();
    std::vector<double> values;
    for (std::size_t c = 2; c < rows[r].size(); ++c) values.push_back(detail::parse_double(rows[r][c]));
    m.values.push_back(std::move(values));
  }
  if (!any_description) m.descriptions.clear();
  return m;
}

// --------------------------------------------------------------------- scan

// hyperactive > bos-anomalous > dead > unflagged.
inline int flag_severity(FeatureFlag f) {
  switch (f) {
    case FeatureFlag::hyperactive: return 3;
    case FeatureFlag::bos_anomalous: return 2;
    case FeatureFlag::dead: return 1;
  }
  return 0;
}

inline int row_severity(const ScanReport& r, const ScanRow& row) {
  int s = 0;
  for (auto f : r.flags(row)) s = std::max(s, flag_severity(f));
  return s;
}

// Severity descending, then density descending, then feature id.
inline std::vector<ScanRow> sorted_scan_rows(const ScanReport& r) {
  auto rows = r.rows;
  std::stable_sort(rows.begin(), rows.end(), [&](const ScanRow& a, const ScanRow& b) {
    const int sa = row_severity(r, a), sb = row_severity(r, b);
    if (sa != sb) return sa > sb;
    if (a.stats.density != b.stats.density) return a.stats.density > b.stats.density;
    return a.feature < b.feature;
  });
  return rows;
}

inline void validate_scan(const ScanReport& r) {
  for (const auto& row : r.rows)
    if (!std::isfinite(row.stats.density) || row.stats.density < 0.0 || row.stats.density > 1.0)
      throw Error(ErrorCode::render, "feature " + row.feature.str() + " has density outside [0, 1]");
}

inline RenderedDocument render_scan(const ScanReport& r, const RenderSpec& spec = {}) {
  validate_scan(r);
  const auto rows = sorted_scan_rows(r);
  auto flag_text = [&](const ScanRow& row) {
    std::string s;
    for (auto f : r.flags(row)) s += (s.empty() ? "" : " ") + to_string(f);
    return s;
  };
  RenderedDocument doc;
  switch (spec.format) {
    case ReportFormat::html: {
      std::string body = "<h1>Feature scan: " + detail::text_escape(spec, r.corpus_id) +
                         "</h1>\n<table>\n<tr><th>feature</th><th>density</th><th>active tokens</th><th>total tokens</th>"
                         "<th>begin-of-text activation</th><th>max in-text activation</th><th>flags</th></tr>\n";
      for (const auto& row : rows) {
        body += "<tr><th>" + row.feature.str() + "</th><td style=\"background-color:" +
                detail::rgba(spec, row.stats.density) + "\">" + detail::fixed(100.0 * row.stats.density) + "%</td><td>" +
                std::to_string(row.stats.active_tokens) + "</td><td>" + std::to_string(row.stats.total_tokens) +
                "</td><td>" + detail::fixed(row.stats.bos_activation) + "</td><td>" +
                detail::fixed(row.stats.max_in_text_activation) + "</td><td>" + flag_text(row) + "</td></tr>\n";
      }
      body += "</table>\n";
      doc.content = detail::html_page("Feature scan", body);
      break;
    }
    case ReportFormat::markdown: {
      doc.content =
          "| feature | density | active tokens | total tokens | begin-of-text activation | max in-text activation | flags |\n"
          "|---|---:|---:|---:|---:|---:|---|\n";
      for (const auto& row : rows)
        doc.content += "| " + row.feature.str() + " | " + detail::fixed(100.0 * row.stats.density) + "% | " +
                       std::to_string(row.stats.active_tokens) + " | " + std::to_string(row.stats.total_tokens) + " | " +
                       detail::fixed(row.stats.bos_activation) + " | " + detail::fixed(row.stats.max_in_text_activation) +
                       " | " + flag_text(row) + " |\n";
      break;
    }
    case ReportFormat::csv: {
      doc.content = detail::join_csv({"feature", "density", "active_tokens", "total_tokens", "bos_activation",
                                      "max_in_text_activation", "flags"});
      for (const auto& row : rows)
        doc.content += detail::join_csv({row.feature.str(), detail::full_precision(row.stats.density),
                                         std::to_string(row.stats.active_tokens), std::to_string(row.stats.total_tokens),
                                         detail::full_precision(row.stats.bos_activation),
                                         detail::full_precision(row.stats.max_in_text_activation), flag_text(row)});
      break;
    }
    case ReportFormat::json: {
      ScanReport sorted = r;
      sorted.rows = rows;
      doc.content = to_json(sorted).dump(2) + "\n";
      break;
    }
  }
  return doc;
}

// -------------------------------------------------------------------- sweep

struct SweepSeries {
  std::string metric;
  std::vector<double> coefficients;
  std::vector<double> values;
};

inline const std::vector<std::string>& sweep_metrics() {
  static const std::vector<std::string> m = {"repetition", "distinct_ratio", "self_perplexity", "concept_hits",
                                             "concept_shift", "breakdown"};
  return m;
}

inline double sweep_metric(const SweepQualityEntry& e, const std::string& metric) {
  if (metric == "repetition") return e.repetition;
  if (metric == "distinct_ratio") return e.distinct_ratio;
  if (metric == "self_perplexity") return e.self_perplexity;
  if (metric == "concept_hits") return static_cast<double>(e.concept_hits);
  if (metric == "concept_shift") return static_cast<double>(e.concept_shift);
  if (metric == "breakdown") return e.breakdown ? 1.0 : 0.0;
  throw Error(ErrorCode::render, "unknown sweep metric '" + metric + "'");
}

inline std::vector<SweepSeries> sweep_series(const SweepQualityReport& r) {
  std::vector<SweepSeries> out;
  for (const auto& metric : sweep_metrics()) {
    SweepSeries s{metric, {}, {}};
    for (const auto& e : r.entries) {
      s.coefficients.push_back(e.coefficient);
      s.values.push_back(sweep_metric(e, metric));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string format_series_csv(const SweepSeries& s) {
  std::string out = "coefficient," + s.metric + "\n";
  for (std::size_t i = 0; i < s.values.size(); ++i)
    out += detail::full_precision(s.coefficients[i]) + "," + detail::full_precision(s.values[i]) + "\n";
  return out;
}

inline SweepSeries parse_series_csv(std::string_view text) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty() || rows[0].size() != 2 || rows[0][0] != "coefficient")
    throw Error(ErrorCode::render, "not a sweep series csv");
  SweepSeries s{rows[0][1], {}, {}};
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != 2) throw Error(ErrorCode::render, "series row " + std::to_string(r) + " has wrong width");
    s.coefficients.push_back(detail::parse_double(rows[r][0]));
    s.values.push_back(detail::parse_double(rows[r][1]));
  }
  return s;
}

// Small multiples, one panel per metric, points joined in coefficient order.
// Breakdown entries are drawn as hollow markers.
inline std::string sweep_chart_svg(const SweepQualityReport& r, const RenderSpec& spec = {}) {
  const std::vector<std::string> panels = {"repetition", "distinct_ratio", "self_perplexity", "concept_hits"};
  const int pw = 260, ph = 160, margin = 36;
  const int width = static_cast<int>(panels.size()) * (pw + margin) + margin;
  const int height = ph + 2 * margin;
  std::vector<std::size_t> order(r.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.entries[a].coefficient < r.entries[b].coefficient; });
  const std::string colour = "rgb(" + std::to_string(spec.red) + "," + std::to_string(spec.green) + "," +
                             std::to_string(spec.blue) + ")";
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  double cmin = 0.0, cmax = 0.0;
  if (!r.entries.empty()) {
    cmin = r.entries[order.front()].coefficient;
    cmax = r.entries[order.back()].coefficient;
  }
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const int x0 = margin + static_cast<int>(p) * (pw + margin), y0 = margin;
    svg += "<g>\n<rect x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(y0) + "\" width=\"" + std::to_string(pw) +
           "\" height=\"" + std::to_string(ph) + "\" fill=\"none\" stroke=\"#999\"/>\n";
    svg += "<text x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(y0 - 8) + "\">" + panels[p] + "</text>\n";
    double vmin = 0.0, vmax = 0.0;
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
      const double v = sweep_metric(r.entries[i], panels[p]);
      if (!std::isfinite(v)) continue;
      if (i == 0) vmin = vmax = v;
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
    auto px = [&](double c) { return x0 + (cmax > cmin ? (c - cmin) / (cmax - cmin) : 0.5) * pw; };
    auto py = [&](double v) { return y0 + ph - (vmax > vmin ? (v - vmin) / (vmax - vmin) : 0.5) * ph; };
    std::string points;
    for (auto i : order) {
      const double v = sweep_metric(r.entries[i], panels[p]);
      if (!std::isfinite(v)) continue;
      points += (points.empty() ? "" : " ") + detail::fixed(px(r.entries[i].coefficient), 1) + "," + detail::fixed(py(v), 1);
    }
    svg += "<polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    for (auto i : order) {
      const double v = sweep_metric(r.entries[i], panels[p]);
      if (!std::isfinite(v)) continue;
      svg += "<circle cx=\"" + detail::fixed(px(r.entries[i].coefficient), 1) + "\" cy=\"" + detail::fixed(py(v), 1) +
             "\" r=\"3\" " + (r.entries[i].breakdown ? "fill=\"white\" stroke=\"" + colour + "\"" : "fill=\"" + colour + "\"") +
             "/>\n";
    }
    svg += "<text x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(y0 + ph + 14) + "\">" + detail::fixed(cmin, 1) +
           "</text>\n<text x=\"" + std::to_string(x0 + pw) + "\" y=\"" + std::to_string(y0 + ph + 14) +
           "\" text-anchor=\"end\">" + detail::fixed(cmax, 1) + "</text>\n";
    svg += "<text x=\"" + std::to_string(x0 - 4) + "\" y=\"" + std::to_string(y0 + 10) + "\" text-anchor=\"end\">" +
           detail::fixed(vmax, 1) + "</text>\n<text x=\"" + std::to_string(x0 - 4) + "\" y=\"" +
           std::to_string(y0 + ph) + "\" text-anchor=\"end\">" + detail::fixed(vmin, 1) + "</text>\n</g>\n";
  }
  svg += "</svg>\n";
  return svg;
}

inline RenderedDocument render_sweep(const SweepQualityReport& r, const RenderSpec& spec = {}) {
  RenderedDocument doc;
  for (const auto& s : sweep_series(r)) doc.files[spec.series_prefix + "_" + s.metric + ".csv"] = format_series_csv(s);
  const std::string chart = sweep_chart_svg(r, spec);
  doc.files[spec.series_prefix + "_chart.svg"] = chart;
  const std::vector<std::string> header{"coefficient",  "repetition",    "distinct ratio", "self perplexity",
                                        "concept hits", "concept shift", "breakdown",      "text"};
  auto row_cells = [&](const SweepQualityEntry& e) {
    return std::vector<std::string>{detail::fixed(e.coefficient, 2), detail::fixed(e.repetition, 3),
                                    detail::fixed(e.distinct_ratio, 3), detail::fixed(e.self_perplexity, 2),
                                    std::to_string(e.concept_hits), std::to_string(e.concept_shift),
                                    e.breakdown ? "yes" : "no"};
  };
  switch (spec.format) {
    case ReportFormat::html: {
      std::string body = "<h1>Steering sweep: feature " + r.feature.str() + "</h1>\n<p>prompt: " +
                         detail::text_escape(spec, r.prompt) + "</p>\n<p>baseline: " +
                         detail::text_escape(spec, r.baseline.text) + "</p>\n" + chart + "<table>\n<tr>";
      for (const auto& h : header) body += "<th>" + h + "</th>";
      body += "</tr>\n";
      for (const auto& e : r.entries) {
        body += "<tr>";
        for (const auto& c : row_cells(e)) body += "<td>" + c + "</td>";
        body += "<td style=\"text-align:left\">" + detail::text_escape(spec, e.text) + "</td></tr>\n";
      }
      body += "</table>\n";
      doc.content = detail::html_page("Steering sweep " + r.feature.str(), body);
      break;
    }
    case ReportFormat::markdown: {
      doc.content = "# Steering sweep: feature " + r.feature.str() + "\n\nprompt: " + detail::markdown_escape(r.prompt) +
                    "\n\nbaseline: " + detail::markdown_escape(r.baseline.text) + "\n\n|";
      for (const auto& h : header) doc.content += " " + h + " |";
      doc.content += "\n|---:|---:|---:|---:|---:|---:|---|---|\n";
      for (const auto& e : r.entries) {
        doc.content += "|";
        for (const auto& c : row_cells(e)) doc.content += " " + c + " |";
        doc.content += " " + detail::markdown_escape(e.text) + " |\n";
      }
      break;
    }
    case ReportFormat::csv: {
      doc.content = detail::join_csv({"coefficient", "repetition", "distinct_ratio", "self_perplexity", "concept_hits",
                                      "concept_shift", "numeric_breakdown", "breakdown", "text"});
      for (const auto& e : r.entries)
        doc.content += detail::join_csv({detail::full_precision(e.coefficient), detail::full_precision(e.repetition),
                                         detail::full_precision(e.distinct_ratio), detail::full_precision(e.self_perplexity),
                                         std::to_string(e.concept_hits), std::to_string(e.concept_shift),
                                         e.numeric_breakdown ? "1" : "0", e.breakdown ? "1" : "0", e.text});
      break;
    }
    case ReportFormat::json: doc.content = to_json(r).dump(2) + "\n"; break;
  }
  return doc;
}

// --------------------------------------------------------------- dispatcher

inline RenderedDocument render_report_json(const nlohmann::json& j, const RenderSpec& spec = {}) {
  const std::string schema = j.value("schema", "");
  if (schema == kHighlightSchema) return render_highlight(highlight_from_json(j), spec);
  if (schema == kConfusionSchema) return render_confusion(confusion_from_json(j), spec);
  if (schema == kScanSchema) return render_scan(scan_from_json(j), spec);
  if (schema == kSweepSchema) return render_sweep(sweep_from_json(j), spec);
  throw Error(ErrorCode::render, "cannot render a document with schema '" + schema + "'");
}

// Auxiliary files go next to `path`.
inline void write_document(const RenderedDocument& doc, const std::filesystem::path& path) {
  auto write = [](const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + p.string());
    out << content;
    if (!out) throw Error(ErrorCode::io, "write failed for " + p.string());
  };
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write(path, doc.content);
  for (const auto& [name, content] : doc.files) write(path.parent_path() / name, content);
}

}  // namespace saelab
