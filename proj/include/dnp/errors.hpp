#pragma once
#include <stdexcept>
#include <string>

namespace dnp {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define DNP_DEFINE_ERROR(Name)                                        \
    struct Name : Error {                                             \
        explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
    }

DNP_DEFINE_ERROR(SingularAffine);
DNP_DEFINE_ERROR(ChildTooLarge);
DNP_DEFINE_ERROR(IoError);
DNP_DEFINE_ERROR(MalformedHeader);
DNP_DEFINE_ERROR(UnsupportedDatatype);
DNP_DEFINE_ERROR(DegenerateImage);
DNP_DEFINE_ERROR(InvalidFactor);
DNP_DEFINE_ERROR(InvalidScheme);
DNP_DEFINE_ERROR(ShapeMismatch);
DNP_DEFINE_ERROR(AllMasked);
DNP_DEFINE_ERROR(NoLabels);
DNP_DEFINE_ERROR(DivergedTraining);
DNP_DEFINE_ERROR(SchemeMismatch);
DNP_DEFINE_ERROR(BadThresholdCount);
DNP_DEFINE_ERROR(InvalidConfig);

#undef DNP_DEFINE_ERROR

} // namespace dnp
