#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>

namespace valleyopt {

// Shortest decimal form that round-trips a double. Used for all CSV output so
// reruns with identical flags produce byte-identical files.
inline std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) break;
    }
    return buf;
}

inline std::string fmt_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

class WallTimer {
public:
    WallTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// Cooperative deadline for long-running solves (bench timeouts).
struct Deadline {
    std::optional<std::chrono::steady_clock::time_point> at;
    bool expired() const { return at && std::chrono::steady_clock::now() > *at; }
    static Deadline after_seconds(double s) {
        Deadline d;
        d.at = std::chrono::steady_clock::now() +
               std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                   std::chrono::duration<double>(s));
        return d;
    }
};

// When false, every `seconds` field written to reports and logs is 0.0 so that
// reruns are byte-identical (the `--timing off` CLI mode).
struct TimingPolicy {
    bool enabled = true;
    double filter(double seconds) const { return enabled ? seconds : 0.0; }
};

} // namespace valleyopt
