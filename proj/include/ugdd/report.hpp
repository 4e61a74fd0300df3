#pragma once

// CSV tables written by `ugdd eval` and the reliability-diagram SVG written
// by `ugdd report`.

#include <string>
#include <vector>

#include "ugdd/metrics.hpp"

namespace ugdd::report {

inline constexpr const char* kBinsHeader = "bin,lower,upper,center,confidence,accuracy,count";
inline constexpr const char* kSampleHeader = "id,iou,dice,hd95,assd,ece,sentinel";

std::string per_sample_csv(const std::vector<metrics::SampleMetrics>& rows);
/// metric,mean,std for each per-sample metric, then the pooled ECE.
std::string aggregate_csv(const std::vector<metrics::SampleMetrics>& rows, const metrics::Calibration& pooled);
std::string bins_csv(const metrics::Calibration& cal);
/// Rows flagged in `hard`, preceded by a "# hard_threshold=..." line.
std::string hard_csv(const std::vector<metrics::SampleMetrics>& rows, const std::vector<bool>& hard, double threshold,
                     const std::string& source);

/// Per-sample rows back from per_sample_csv. Throws IngestionError.
std::vector<metrics::SampleMetrics> parse_per_sample_csv(const std::string& text);
/// Throws IngestionError on a malformed table.
std::vector<metrics::ReliabilityBin> parse_bins_csv(const std::string& text);

/// Count-weighted mean of |accuracy - confidence|.
double ece_from_bins(const std::vector<metrics::ReliabilityBin>& bins);

/// Diagonal reference plus one accuracy bar per non-empty bin.
std::string reliability_svg(const std::vector<metrics::ReliabilityBin>& bins);
std::string summary_text(const std::vector<metrics::ReliabilityBin>& bins);

/// Whole file as a string; throws IngestionError.
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace ugdd::report
