#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace exgrpo {

/// Metric columns, in CSV order. Missing metrics are written as empty cells.
const std::vector<std::string>& metric_columns();

struct MetricsRow {
    std::string stage;
    std::size_t step = 0;
    std::map<std::string, double> values;
    double wall_ms = 0.0;  // kept out of the metrics CSV so that file stays reproducible
};

/// Append-only row log; a step must not go backwards within a stage.
class MetricsLog {
public:
    void append(MetricsRow row);
    const std::vector<MetricsRow>& rows() const noexcept { return rows_; }

private:
    std::vector<MetricsRow> rows_;
};

/// "stage,step,<metric columns>" header then one line per row; numbers printed with 17 significant digits.
void export_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path);
/// "stage,step,wall_ms"
void export_timing(std::span<const MetricsRow> rows, const std::filesystem::path& path);
std::vector<MetricsRow> load_metrics(const std::filesystem::path& path);

/// Trailing moving average; window 1 is the identity.
std::vector<double> moving_average(std::span<const double> series, std::size_t window);
/// max(1, round(fraction * n))
std::size_t smoothing_window(std::size_t n, double fraction);

/// Spearman rank correlation with average ranks for ties. NaN when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// SVG line chart of smoothed mean_r_base and dsu_rate against step for `stage` rows.
void plot_emit(std::span<const MetricsRow> rows, const std::filesystem::path& path, std::size_t window,
               const std::string& stage = "rl");

}  // namespace exgrpo
