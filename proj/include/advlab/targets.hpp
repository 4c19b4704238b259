#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace advlab {

/// Training target with 1-s on `label` and s/(K-1) on every other class.
inline std::vector<double> smooth_labels(std::size_t label, std::size_t class_count, double smoothing) {
    if (class_count < 2) {
        throw std::invalid_argument("smooth_labels: class_count must be >= 2");
    }
    if (label >= class_count) {
        throw std::invalid_argument("smooth_labels: label " + std::to_string(label) + " >= class_count " +
                                    std::to_string(class_count));
    }
    if (!(smoothing >= 0.0 && smoothing < 1.0)) {
        throw std::invalid_argument("smooth_labels: smoothing must lie in [0,1), got " + std::to_string(smoothing));
    }
    std::vector<double> t(class_count, smoothing / static_cast<double>(class_count - 1));
    t[label] = 1.0 - smoothing;
    return t;
}

inline std::vector<double> one_hot(std::size_t label, std::size_t class_count) {
    return smooth_labels(label, class_count, 0.0);
}

}  // namespace advlab
