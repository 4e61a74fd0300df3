#include "ugdd/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ugdd/errors.hpp"

namespace ugdd::report {
namespace {

std::string num(double v, int digits = 10) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string fixed(double v, int decimals = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t lineno) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw IngestionError("line " + std::to_string(lineno) + ": bad number '" + s + "'");
  return v;
}

std::vector<std::string> data_lines(const std::string& text, const char* header) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  bool seen_header = false;
  while (std::getline(ss, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!seen_header) {
      if (line != header) throw IngestionError("expected header '" + std::string(header) + "'");
      seen_header = true;
      continue;
    }
    lines.push_back(line);
  }
  if (!seen_header) throw IngestionError("missing header '" + std::string(header) + "'");
  return lines;
}

void sample_row(std::ostream& os, const metrics::SampleMetrics& m) {
  os << m.id << ',' << num(m.iou) << ',' << num(m.dice) << ',' << num(m.hd95) << ',' << num(m.assd) << ','
     << num(m.ece) << ',' << (m.sentinel ? 1 : 0) << '\n';
}

}  // namespace

std::string per_sample_csv(const std::vector<metrics::SampleMetrics>& rows) {
  std::ostringstream os;
  os << kSampleHeader << '\n';
  for (const auto& m : rows) sample_row(os, m);
  return os.str();
}

std::string aggregate_csv(const std::vector<metrics::SampleMetrics>& rows, const metrics::Calibration& pooled) {
  std::ostringstream os;
  os << "metric,mean,std,n\n";
  auto column = [&](const char* name, double metrics::SampleMetrics::*field) {
    std::vector<double> v;
    for (const auto& m : rows) v.push_back(m.*field);
    const auto s = metrics::summarize(v);
    os << name << ',' << num(s.mean) << ',' << num(s.std) << ',' << rows.size() << '\n';
  };
  column("iou", &metrics::SampleMetrics::iou);
  column("dice", &metrics::SampleMetrics::dice);
  column("hd95", &metrics::SampleMetrics::hd95);
  column("assd", &metrics::SampleMetrics::assd);
  column("ece", &metrics::SampleMetrics::ece);
  os << "pooled_ece," << num(pooled.ece) << ",0," << pooled.total() << '\n';
  return os.str();
}

std::string bins_csv(const metrics::Calibration& cal) {
  std::ostringstream os;
  os << kBinsHeader << '\n';
  for (std::size_t i = 0; i < cal.bins.size(); ++i) {
    const auto& b = cal.bins[i];
    os << i << ',' << num(b.lower, 17) << ',' << num(b.upper, 17) << ',' << num(b.center(), 17) << ','
       << num(b.confidence, 17) << ',' << num(b.accuracy, 17) << ',' << b.count << '\n';
  }
  return os.str();
}

std::string hard_csv(const std::vector<metrics::SampleMetrics>& rows, const std::vector<bool>& hard, double threshold,
                     const std::string& source) {
  if (hard.size() != rows.size()) throw ContractError("hard_csv: one flag per row expected");
  std::ostringstream os;
  os << "# hard_threshold=" << num(threshold, 17) << " source=" << source << '\n';
  os << kSampleHeader << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (hard[i]) sample_row(os, rows[i]);
  return os.str();
}

std::vector<metrics::SampleMetrics> parse_per_sample_csv(const std::string& text) {
  std::vector<metrics::SampleMetrics> out;
  std::size_t lineno = 1;
  for (const auto& line : data_lines(text, kSampleHeader)) {
    ++lineno;
    const auto f = split_fields(line);
    if (f.size() != 7) throw IngestionError("line " + std::to_string(lineno) + ": expected 7 fields");
    metrics::SampleMetrics m;
    m.id = f[0];
    m.iou = parse_number(f[1], lineno);
    m.dice = parse_number(f[2], lineno);
    m.hd95 = parse_number(f[3], lineno);
    m.assd = parse_number(f[4], lineno);
    m.ece = parse_number(f[5], lineno);
    m.sentinel = f[6] == "1";
    out.push_back(m);
  }
  return out;
}

std::vector<metrics::ReliabilityBin> parse_bins_csv(const std::string& text) {
  std::vector<metrics::ReliabilityBin> out;
  std::size_t lineno = 1;
  for (const auto& line : data_lines(text, kBinsHeader)) {
    ++lineno;
    const auto f = split_fields(line);
    if (f.size() != 7) throw IngestionError("line " + std::to_string(lineno) + ": expected 7 fields");
    metrics::ReliabilityBin b;
    b.lower = parse_number(f[1], lineno);
    b.upper = parse_number(f[2], lineno);
    b.confidence = parse_number(f[4], lineno);
    b.accuracy = parse_number(f[5], lineno);
    const double count = parse_number(f[6], lineno);
    if (count < 0 || count != std::floor(count))
      throw IngestionError("line " + std::to_string(lineno) + ": count must be a non-negative integer");
    b.count = static_cast<std::size_t>(count);
    if (!(b.lower < b.upper) || b.accuracy < 0 || b.accuracy > 1 || b.confidence < 0 || b.confidence > 1)
      throw IngestionError("line " + std::to_string(lineno) + ": values out of range");
    out.push_back(b);
  }
  if (out.empty()) throw IngestionError("no bins");
  return out;
}

double ece_from_bins(const std::vector<metrics::ReliabilityBin>& bins) {
  std::size_t total = 0;
  for (const auto& b : bins) total += b.count;
  if (total == 0) return 0.0;
  double e = 0.0;
  for (const auto& b : bins) e += static_cast<double>(b.count) * std::abs(b.accuracy - b.confidence);
  return e / static_cast<double>(total);
}

std::string reliability_svg(const std::vector<metrics::ReliabilityBin>& bins) {
  constexpr double size = 400.0, pad = 48.0, plot = size - 2 * pad;
  const double x0 = bins.empty() ? 0.5 : bins.front().lower;
  const double x1 = bins.empty() ? 1.0 : bins.back().upper;
  auto sx = [&](double c) { return pad + (c - x0) / (x1 - x0) * plot; };
  auto sy = [&](double a) { return size - pad - a * plot; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"400\" viewBox=\"0 0 400 400\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"400\" height=\"400\" fill=\"white\"/>\n";
  os << "<rect x=\"" << fixed(pad) << "\" y=\"" << fixed(pad) << "\" width=\"" << fixed(plot) << "\" height=\""
     << fixed(plot) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const auto& b = bins[i];
    if (b.count == 0) continue;
    const double left = sx(b.lower), right = sx(b.upper), top = sy(b.accuracy);
    os << "<rect class=\"bar\" data-bin=\"" << i << "\" data-confidence=\"" << num(b.confidence, 6)
       << "\" data-accuracy=\"" << num(b.accuracy, 6) << "\" x=\"" << fixed(left) << "\" y=\"" << fixed(top)
       << "\" width=\"" << fixed(right - left) << "\" height=\"" << fixed(size - pad - top)
       << "\" fill=\"#4a78b5\" fill-opacity=\"0.8\" stroke=\"#1f3b63\"/>\n";
  }
  // Perfect calibration: accuracy equals confidence.
  os << "<line class=\"diagonal\" x1=\"" << fixed(sx(x0)) << "\" y1=\"" << fixed(sy(x0)) << "\" x2=\"" << fixed(sx(x1))
     << "\" y2=\"" << fixed(sy(x1)) << "\" stroke=\"#c0392b\" stroke-dasharray=\"6,4\"/>\n";
  os << "<text x=\"200\" y=\"" << fixed(size - 12) << "\" text-anchor=\"middle\" font-size=\"14\">confidence</text>\n";
  os << "<text x=\"16\" y=\"200\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 16 200)\">"
     << "accuracy</text>\n";
  os << "<text x=\"" << fixed(pad) << "\" y=\"" << fixed(size - pad + 16) << "\" font-size=\"11\">" << fixed(x0, 2)
     << "</text>\n";
  os << "<text x=\"" << fixed(size - pad) << "\" y=\"" << fixed(size - pad + 16)
     << "\" font-size=\"11\" text-anchor=\"end\">" << fixed(x1, 2) << "</text>\n";
  os << "<text x=\"200\" y=\"30\" text-anchor=\"middle\" font-size=\"14\">ECE " << fixed(ece_from_bins(bins), 4)
     << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string summary_text(const std::vector<metrics::ReliabilityBin>& bins) {
  std::size_t total = 0, used = 0;
  for (const auto& b : bins) {
    total += b.count;
    used += b.count > 0;
  }
  std::ostringstream os;
  os << "ece = " << num(ece_from_bins(bins), 17) << '\n';
  os << "pixels = " << total << '\n';
  os << "bins = " << bins.size() << " (" << used << " non-empty)\n";
  return os.str();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write " + path);
  out << text;
  if (!out) throw IngestionError("write failed: " + path);
}

}  // namespace ugdd::report
