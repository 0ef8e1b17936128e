#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aub/common.hpp"

namespace aub {

struct ParamSegment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
};

/// Flat parameter/gradient storage for one trainable component. Segments are
/// appended at construction time, are disjoint by construction, and cover the
/// whole array. values and grads always have identical length.
class ParameterStore {
public:
    /// Appends a named segment of `length` doubles (values and grads zeroed)
    /// and returns its offset.
    std::size_t add_segment(std::string name, std::size_t length) {
        require(length > 0, "parameter segment '", name, "' must be non-empty");
        const std::size_t offset = values_.size();
        segments_.push_back({std::move(name), offset, length});
        values_.resize(offset + length, 0.0);
        grads_.resize(offset + length, 0.0);
        return offset;
    }

    std::size_t size() const { return values_.size(); }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::span<double> grads() { return grads_; }
    std::span<const double> grads() const { return grads_; }

    std::span<double> values(std::size_t offset, std::size_t length) {
        return {values_.data() + offset, length};
    }
    std::span<const double> values(std::size_t offset, std::size_t length) const {
        return {values_.data() + offset, length};
    }
    std::span<double> grads(std::size_t offset, std::size_t length) {
        return {grads_.data() + offset, length};
    }
    std::span<const double> grads(std::size_t offset, std::size_t length) const {
        return {grads_.data() + offset, length};
    }

    const std::vector<ParamSegment>& segments() const { return segments_; }

    void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

    /// Human-readable name of a flat coordinate, e.g. "layer0.s.w0[17]".
    std::string coordinate_name(std::size_t flat_index) const {
        for (const auto& s : segments_) {
            if (flat_index >= s.offset && flat_index < s.offset + s.length) {
                return s.name + "[" + std::to_string(flat_index - s.offset) + "]";
            }
        }
        return "param[" + std::to_string(flat_index) + "]";
    }

    std::vector<double> snapshot() const { return values_; }

    void restore(std::span<const double> snapshot) {
        require(snapshot.size() == values_.size(), "snapshot length mismatch: ",
                snapshot.size(), " vs ", values_.size());
        std::copy(snapshot.begin(), snapshot.end(), values_.begin());
    }

private:
    std::vector<double> values_;
    std::vector<double> grads_;
    std::vector<ParamSegment> segments_;
};

}  // namespace aub
