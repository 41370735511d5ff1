// SPDX-License-Identifier: Apache-2.0
//
// Attention trace and prediction output: JSON, ANSI heatmaps and static HTML.
//
// Shading is a per-distribution min-max map of the raw weights onto 0..100:
// shade = round(100 * (w - min) / (max - min)), and 100 for every token when
// all weights are equal. Weights are printed unchanged next to the shade.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "iatn/error.hpp"
#include "iatn/inference.hpp"
#include "iatn/prediction.hpp"

namespace iatn {

using Json = nlohmann::json;

struct TraceDocument {
  int doc_id = 0;
  std::vector<std::string> tokens;
  friend bool operator==(const TraceDocument&, const TraceDocument&) = default;
};

/// An attention trace together with the tokens it attends over. Each step's
/// d_hat runs over the documents' tokens in order.
struct TraceView {
  AttentionTrace trace;
  std::vector<std::string> tokens_query;
  std::vector<TraceDocument> tokens_docs;
  friend bool operator==(const TraceView&, const TraceView&) = default;
};

inline Json trace_to_json(const TraceView& view) {
  Json steps = Json::array();
  for (const AttentionStep& s : view.trace.steps) {
    steps.push_back({{"q_hat", s.q_hat}, {"d_hat", s.d_hat}});
  }
  Json docs = Json::array();
  for (const TraceDocument& d : view.tokens_docs) {
    docs.push_back({{"doc_id", d.doc_id}, {"tokens", d.tokens}});
  }
  return {{"steps", steps}, {"tokens_query", view.tokens_query}, {"tokens_docs", docs}};
}

inline TraceView trace_from_json(const Json& j) {
  try {
    TraceView view;
    for (const Json& s : j.at("steps")) {
      view.trace.steps.push_back(
          {s.at("q_hat").get<std::vector<double>>(), s.at("d_hat").get<std::vector<double>>()});
    }
    view.tokens_query = j.at("tokens_query").get<std::vector<std::string>>();
    for (const Json& d : j.at("tokens_docs")) {
      view.tokens_docs.push_back(
          {d.at("doc_id").get<int>(), d.at("tokens").get<std::vector<std::string>>()});
    }
    return view;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed trace JSON: ") + e.what());
  }
}

/// Min-max map of `weights` onto integer shades 0..100.
inline std::vector<int> shades(const std::vector<double>& weights) {
  std::vector<int> out(weights.size(), 100);
  if (weights.empty()) return out;
  const auto [lo, hi] = std::minmax_element(weights.begin(), weights.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = static_cast<int>(std::lround(100.0 * (weights[i] - *lo) / range));
  }
  return out;
}

namespace detail {

inline std::string ansi_token(const std::string& token, int shade) {
  const int fade = 255 - static_cast<int>(std::lround(2.55 * shade));
  const bool dark = shade > 60;
  return "\x1b[48;2;255;" + std::to_string(fade) + ";" + std::to_string(fade) + "m" +
         (dark ? "\x1b[97m" : "\x1b[30m") + token + "\x1b[0m";
}

inline std::string html_escape(const std::string& s) {
  std::string out;
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

inline std::string format_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", w);
  return buf;
}

inline std::string html_span(const std::string& token, double weight, int shade) {
  const double alpha = shade / 100.0;
  char style[64];
  std::snprintf(style, sizeof style, "background:rgba(220,40,40,%.2f)", alpha);
  return "<span class=\"tok\" data-weight=\"" + format_weight(weight) + "\" data-shade=\"" +
         std::to_string(shade) + "\" style=\"" + style + "\">" + html_escape(token) + "</span>";
}

/// Document spans of a step's d_hat, ordered by their strongest token.
inline std::vector<std::size_t> facts_by_relevance(const TraceView& view, const AttentionStep& step,
                                                   std::vector<std::size_t>& offsets) {
  offsets.clear();
  std::size_t offset = 0;
  std::vector<double> peak;
  for (const TraceDocument& d : view.tokens_docs) {
    offsets.push_back(offset);
    double m = -1.0;
    for (std::size_t i = 0; i < d.tokens.size(); ++i) m = std::max(m, step.d_hat.at(offset + i));
    peak.push_back(m);
    offset += d.tokens.size();
  }
  if (offset != step.d_hat.size()) {
    throw ShapeError("trace: " + std::to_string(step.d_hat.size()) + " document weights for " +
                     std::to_string(offset) + " document tokens");
  }
  std::vector<std::size_t> order(view.tokens_docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return peak[a] > peak[b]; });
  return order;
}

inline void check_query_width(const TraceView& view, const AttentionStep& step) {
  if (step.q_hat.size() != view.tokens_query.size()) {
    throw ShapeError("trace: " + std::to_string(step.q_hat.size()) + " query weights for " +
                     std::to_string(view.tokens_query.size()) + " query tokens");
  }
}

}  // namespace detail

/// One block per step: the question line, then the facts ordered by their
/// strongest token, each token on a red background scaled by its shade.
inline std::string render_ansi(const TraceView& view) {
  std::string out;
  for (std::size_t t = 0; t < view.trace.steps.size(); ++t) {
    const AttentionStep& step = view.trace.steps[t];
    detail::check_query_width(view, step);
    out += "step " + std::to_string(t + 1) + "\n  Q:";
    const auto qs = shades(step.q_hat);
    for (std::size_t i = 0; i < qs.size(); ++i) out += " " + detail::ansi_token(view.tokens_query[i], qs[i]);
    out += "\n";
    std::vector<std::size_t> offsets;
    const auto order = detail::facts_by_relevance(view, step, offsets);
    const auto ds = shades(step.d_hat);
    for (std::size_t f : order) {
      const TraceDocument& d = view.tokens_docs[f];
      out += "  [" + std::to_string(d.doc_id) + "]";
      for (std::size_t i = 0; i < d.tokens.size(); ++i) {
        out += " " + detail::ansi_token(d.tokens[i], ds[offsets[f] + i]);
      }
      out += "\n";
    }
  }
  return out;
}

/// Static page: per step a question line and the facts as shaded spans,
/// most relevant fact first. Each span carries its raw weight and shade.
inline std::string render_html(const TraceView& view, const std::string& title = "Attention trace") {
  std::string out =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + detail::html_escape(title) +
      "</title>\n<style>body{font-family:sans-serif}.tok{padding:1px 3px;margin:1px;"
      "border-radius:3px}.fact,.question{margin:4px 0}</style></head><body>\n";
  for (std::size_t t = 0; t < view.trace.steps.size(); ++t) {
    const AttentionStep& step = view.trace.steps[t];
    detail::check_query_width(view, step);
    out += "<section class=\"step\" data-step=\"" + std::to_string(t + 1) + "\">\n<h2>Step " +
           std::to_string(t + 1) + "</h2>\n<div class=\"question\">";
    const auto qs = shades(step.q_hat);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      out += detail::html_span(view.tokens_query[i], step.q_hat[i], qs[i]);
    }
    out += "</div>\n";
    std::vector<std::size_t> offsets;
    const auto order = detail::facts_by_relevance(view, step, offsets);
    const auto ds = shades(step.d_hat);
    for (std::size_t f : order) {
      const TraceDocument& d = view.tokens_docs[f];
      out += "<div class=\"fact\" data-doc-id=\"" + std::to_string(d.doc_id) + "\">";
      for (std::size_t i = 0; i < d.tokens.size(); ++i) {
        out += detail::html_span(d.tokens[i], step.d_hat[offsets[f] + i], ds[offsets[f] + i]);
      }
      out += "</div>\n";
    }
    out += "</section>\n";
  }
  out += "</body></html>\n";
  return out;
}

struct AnswerWithScore {
  std::string surface;
  double score = 0.0;
};

inline Json prediction_to_json(const std::string& question, const std::vector<AnswerWithScore>& answers,
                               int k) {
  Json list = Json::array();
  for (const AnswerWithScore& a : answers) list.push_back({{"surface", a.surface}, {"score", a.score}});
  return {{"question", question}, {"answers", list}, {"k", k}};
}

}  // namespace iatn
