#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bfusion {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class for every error raised by the library.
class FusionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public FusionError {
public:
    DimensionMismatch(const std::string& where, Eigen::Index expected, Eigen::Index got)
        : FusionError(where + ": expected dimension " + std::to_string(expected) + ", got " + std::to_string(got)) {}
};

class InvalidArgument : public FusionError {
public:
    using FusionError::FusionError;
};

/// All particle weights vanished at a normalisation step.
class WeightCollapse : public FusionError {
public:
    explicit WeightCollapse(int iteration)
        : FusionError("weight collapse at iteration " + std::to_string(iteration)), iteration_(iteration) {}
    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

/// A simulation routine exceeded one of its hard caps (layer index, Poisson
/// count, rejection attempts).
class SimulationLimit : public FusionError {
public:
    using FusionError::FusionError;
};

/// Axis-aligned hyperrectangle [lo_1,hi_1] x ... x [lo_d,hi_d].
struct Box {
    Vector lo;
    Vector hi;

    Eigen::Index dim() const { return lo.size(); }
    bool contains(const Vector& x) const {
        return ((x.array() >= lo.array()) && (x.array() <= hi.array())).all();
    }
};

inline void require_dim(const char* where, Eigen::Index expected, Eigen::Index got) {
    if (expected != got) {
        throw DimensionMismatch(where, expected, got);
    }
}

} // namespace bfusion
