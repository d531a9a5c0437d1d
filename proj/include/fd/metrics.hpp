#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "fd/errors.hpp"

namespace fd {

// One evaluation row; `corruption` is "none" outside phase=corrupt.
struct MetricsRecord {
    std::string run_id;
    std::string method;
    std::uint64_t seed = 0;
    std::string phase; // train|val|test|corrupt
    std::string corruption = "none";
    int severity = 0;
    int epoch = 0;
    double accuracy = 0.0;
    double loss = 0.0;

    bool operator==(const MetricsRecord&) const = default;
};

inline constexpr const char* kMetricsHeader =
    "run_id,method,seed,phase,corruption,severity,epoch,accuracy,loss";

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRecord>& recs) {
    os << kMetricsHeader << '\n';
    for (const MetricsRecord& r : recs) {
        os << r.run_id << ',' << r.method << ',' << r.seed << ',' << r.phase << ','
           << r.corruption << ',' << r.severity << ',' << r.epoch << ','
           << std::setprecision(17) << r.accuracy << ',' << r.loss << '\n';
    }
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& recs) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open metrics csv for writing: " + path);
    write_metrics_csv(os, recs);
    if (!os) throw DataError("metrics csv write failed: " + path);
}

inline std::vector<MetricsRecord> read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kMetricsHeader)
        throw DataError("metrics csv: bad header");
    std::vector<MetricsRecord> recs;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ss, field, ',')) f.push_back(field);
        if (f.size() != 9) throw DataError("metrics csv: bad row: " + line);
        MetricsRecord r;
        r.run_id = f[0];
        r.method = f[1];
        r.seed = std::stoull(f[2]);
        r.phase = f[3];
        r.corruption = f[4];
        r.severity = std::stoi(f[5]);
        r.epoch = std::stoi(f[6]);
        r.accuracy = std::stod(f[7]);
        r.loss = std::stod(f[8]);
        recs.push_back(std::move(r));
    }
    return recs;
}

inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open metrics csv: " + path);
    return read_metrics_csv(is);
}

} // namespace fd
