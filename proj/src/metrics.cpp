#include "exgrpo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "exgrpo/error.hpp"

namespace exgrpo {

const std::vector<std::string>& metric_columns() {
    static const std::vector<std::string> cols = {"loss",  "accuracy",  "mean_r_base", "mean_r_total",
                                                  "dsu_rate", "kl", "grad_norm", "objective", "aux_loss"};
    return cols;
}

void MetricsLog::append(MetricsRow row) {
    for (auto it = rows_.rbegin(); it != rows_.rend(); ++it)
        if (it->stage == row.stage) {
            if (row.step < it->step)
                throw InvariantError("metrics step went backwards in stage " + row.stage);
            break;
        }
    rows_.push_back(std::move(row));
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

void export_metrics(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metrics " + path.string());
    out << "stage,step";
    for (const auto& c : metric_columns()) out << ',' << c;
    out << '\n';
    for (const auto& r : rows) {
        out << r.stage << ',' << r.step;
        for (const auto& c : metric_columns()) {
            out << ',';
            if (auto it = r.values.find(c); it != r.values.end()) out << fmt(it->second);
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing metrics " + path.string());
}

void export_timing(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write timing " + path.string());
    out << "stage,step,wall_ms\n";
    for (const auto& r : rows) out << r.stage << ',' << r.step << ',' << fmt(r.wall_ms) << '\n';
}

std::vector<MetricsRow> load_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty metrics file", 1);
    const auto header = split_csv(line);
    std::vector<std::string> expected{"stage", "step"};
    expected.insert(expected.end(), metric_columns().begin(), metric_columns().end());
    if (header != expected) throw ParseError("unexpected metrics header", 1);
    std::vector<MetricsRow> rows;
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        const auto cells = split_csv(line);
        if (cells.size() != expected.size()) throw ParseError("wrong number of cells", n);
        MetricsRow r;
        r.stage = cells[0];
        try {
            std::size_t used = 0;
            r.step = std::stoull(cells[1], &used);
            if (used != cells[1].size()) throw std::invalid_argument(cells[1]);
            for (std::size_t i = 2; i < cells.size(); ++i) {
                if (cells[i].empty()) continue;
                const double v = std::stod(cells[i], &used);
                if (used != cells[i].size()) throw std::invalid_argument(cells[i]);
                r.values[expected[i]] = v;
            }
        } catch (const std::exception&) {
            throw ParseError("malformed number", n);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
    if (window == 0) throw ContractError("smoothing window must be positive");
    std::vector<double> out(series.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        sum += series[i];
        if (i >= window) sum -= series[i - window];
        const std::size_t n = std::min(i + 1, window);
        out[i] = window == 1 ? series[i] : sum / static_cast<double>(n);
    }
    return out;
}

std::size_t smoothing_window(std::size_t n, double fraction) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman needs two equal series of length >= 2");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

void plot_emit(std::span<const MetricsRow> rows, const std::filesystem::path& path, std::size_t window,
               const std::string& stage) {
    std::vector<double> steps, base, dsu;
    for (const auto& r : rows) {
        if (r.stage != stage) continue;
        steps.push_back(static_cast<double>(r.step));
        auto b = r.values.find("mean_r_base");
        auto d = r.values.find("dsu_rate");
        base.push_back(b == r.values.end() ? 0.0 : b->second);
        dsu.push_back(d == r.values.end() ? 0.0 : d->second);
    }
    if (steps.empty()) throw ContractError("no '" + stage + "' rows to plot");
    const auto sb = moving_average(base, window);
    const auto sd = moving_average(dsu, window);

    const double w = 640, h = 360, pad = 48;
    const double x0 = steps.front(), x1 = std::max(steps.back(), x0 + 1.0);
    auto px = [&](double s) { return pad + (s - x0) / (x1 - x0) * (w - 2 * pad); };
    auto py = [&](double v) { return h - pad - std::clamp(v, 0.0, 1.2) / 1.2 * (h - 2 * pad); };
    auto polyline = [&](const std::vector<double>& ys, const char* colour) {
        std::string pts;
        for (std::size_t i = 0; i < ys.size(); ++i) pts += fmt(px(steps[i])) + "," + fmt(py(ys[i])) + " ";
        return "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"" + pts +
               "\"/>\n";
    };

    std::ofstream out(path);
    if (!out) throw IoError("cannot write plot " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - pad << "\" y2=\"" << h - pad
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << h - pad
        << "\" stroke=\"black\"/>\n";
    for (double v : {0.0, 0.5, 1.0})
        out << "<text x=\"" << pad - 28 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\">" << v << "</text>\n";
    out << "<text x=\"" << w / 2 - 20 << "\" y=\"" << h - 12 << "\" font-size=\"12\">step</text>\n";
    out << polyline(sb, "#1f77b4") << polyline(sd, "#d62728");
    out << "<text x=\"" << w - pad - 150 << "\" y=\"" << pad - 20 << "\" font-size=\"12\" fill=\"#1f77b4\">"
        << "R_base (smoothed)</text>\n";
    out << "<text x=\"" << w - pad - 150 << "\" y=\"" << pad - 6 << "\" font-size=\"12\" fill=\"#d62728\">"
        << "bonus fire rate (smoothed)</text>\n";
    out << "<text x=\"" << pad << "\" y=\"" << pad - 20 << "\" font-size=\"11\">window " << window
        << " steps</text>\n";
    out << "</svg>\n";
}

}  // namespace exgrpo
