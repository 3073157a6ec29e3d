#ifndef SPECFLOW_ERRORS_HPP
#define SPECFLOW_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace specflow {

/// Base class for all library failures that carry diagnostic context.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape or size mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input fails a structural requirement (not symplectic, not Hermitian,
/// frame rank-deficient, incompatible symmetry data, ...).
class StructureError : public Error {
public:
    using Error::Error;
};

/// A tolerance-based decision could not be made unambiguously
/// (eigenvalue clusters straddling a classification band, no valid
/// spectral gap for the kernel cut, missing spectral partner, ...).
class ToleranceError : public Error {
public:
    double gap = 0.0;
    ToleranceError(const std::string& what, double gap_) : Error(what), gap(gap_) {}
    explicit ToleranceError(const std::string& what) : Error(what) {}
};

/// A crossing of a Lagrangian pair is degenerate: the crossing form has an
/// eigenvalue too close to zero for a trustworthy signature.
class DegenerateCrossingError : public Error {
public:
    double time = 0.0;
    double smallest = 0.0;
    DegenerateCrossingError(const std::string& what, double t, double s)
        : Error(what), time(t), smallest(s) {}
};

/// Crossing localization failed (unresolved cluster of near-zero minima).
class ResolutionError : public Error {
public:
    using Error::Error;
};

/// Discretization grid incompatible with a requested operation
/// (symmetry order not dividing the node count, odd node count for a
/// reflection, fundamental-domain dimensions that do not match, ...).
class GridError : public Error {
public:
    using Error::Error;
};

/// Problem file or report file malformed.
class ParseError : public Error {
public:
    using Error::Error;
};

/// An integer identity that holds for exact data came out violated, which
/// signals a broken precondition (failed equivariance, too-coarse grid)
/// rather than a numerical tolerance issue.
class IdentityError : public Error {
public:
    using Error::Error;
};

}

#endif
