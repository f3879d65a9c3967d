#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ossd/config.hpp"
#include "ossd/metrics.hpp"
#include "ossd/selftrain.hpp"

namespace ossd {

// Exit statuses of the ossd tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRunFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitNumerical = 4;

inline constexpr const char* kTelemetryHeader = "iter,n_pseudo_id,n_pseudo_ood,fp_rate,test_acc,ood_auroc";
inline constexpr const char* kSummaryHeader = "mode,seed,final_fp_rate,final_test_acc,final_ood_auroc";
inline constexpr const char* kMetricsHeader = "auroc,fpr50,fpr75,fpr95";

std::string telemetry_csv(const Telemetry& telemetry);
std::string summary_row(Mode mode, std::uint64_t seed, const Telemetry& telemetry);
std::string metrics_row(const MetricReport& report);

// Runs one pipeline and writes telemetry.csv, summary.csv, config.txt,
// teacher.ossd and, in offline mode, offline_ood.ossd and ood_detector.csv
// into out_dir. Returns the summary row (without header).
std::string simulate_to_dir(const RunSpec& spec, Mode mode, std::uint64_t seed, const std::filesystem::path& out_dir);

// Maps the current exception to an exit status and reports it on err.
int report_exception(std::ostream& err);

// Entry point of the ossd tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ossd
