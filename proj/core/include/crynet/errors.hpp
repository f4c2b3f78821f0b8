#pragma once

#include <stdexcept>
#include <string>

namespace crynet {

// Domain-specific failures. Everything derives from Error so callers can
// catch the whole family at the CLI boundary.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define CRYNET_DEFINE_ERROR(NAME)                                    \
    class NAME : public Error {                                      \
    public:                                                          \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

// tensor engine
CRYNET_DEFINE_ERROR(ShapeMismatch);
CRYNET_DEFINE_ERROR(InputTooShort);
CRYNET_DEFINE_ERROR(EmptyTime);
CRYNET_DEFINE_ERROR(TimeMismatch);
CRYNET_DEFINE_ERROR(NonScalarLoss);
CRYNET_DEFINE_ERROR(DoubleBackward);

// audio frontend
CRYNET_DEFINE_ERROR(FileNotFound);
CRYNET_DEFINE_ERROR(UnsupportedFormat);
CRYNET_DEFINE_ERROR(CorruptHeader);
CRYNET_DEFINE_ERROR(AllSilent);
CRYNET_DEFINE_ERROR(TooShort);

// blocks
CRYNET_DEFINE_ERROR(ScaleIndivisible);
CRYNET_DEFINE_ERROR(HeadIndivisible);

// model assembly
CRYNET_DEFINE_ERROR(ConfigInvalid);
CRYNET_DEFINE_ERROR(VersionMismatch);
CRYNET_DEFINE_ERROR(CorruptCheckpoint);

// training
CRYNET_DEFINE_ERROR(LabelOutOfRange);
CRYNET_DEFINE_ERROR(EmptyClass);
CRYNET_DEFINE_ERROR(NaNLoss);

#undef CRYNET_DEFINE_ERROR

}  // namespace crynet
