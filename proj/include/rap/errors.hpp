#pragma once

#include <stdexcept>
#include <string>

namespace rap {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// core_data
struct MissingColumn : Error { using Error::Error; };
struct UnexpectedColumn : Error { using Error::Error; };
struct BadValue : Error { using Error::Error; };
struct MandatoryReportingViolation : Error { using Error::Error; };
struct NonBinaryField : Error { using Error::Error; };
struct UnknownLevel : Error { using Error::Error; };

// stat_engine
struct Separation : Error { using Error::Error; };
struct AllSameResponse : Error { using Error::Error; };
struct SingularWeightedSystem : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NonConvergence : Error { using Error::Error; };
struct RankDeficient : Error { using Error::Error; };
struct EmptyPointSet : Error { using Error::Error; };
struct AllZeroWeights : Error { using Error::Error; };

// mobility
struct ZeroRow : Error { using Error::Error; };

// crr / race_place
struct DegenerateDenominator : Error { using Error::Error; };
struct InsufficientData : Error { using Error::Error; };
struct DensityUnderflow : Error { using Error::Error; };
struct OutOfRange : Error { using Error::Error; };
struct ZeroDensity : Error { using Error::Error; };
struct GridMismatch : Error { using Error::Error; };

// sensitivity / benchmark
struct MissingConfounder : Error { using Error::Error; };
struct TooLarge : Error { using Error::Error; };
struct TargetOutOfRange : Error { using Error::Error; };

// cli
struct ConfigError : Error { using Error::Error; };

}  // namespace rap
