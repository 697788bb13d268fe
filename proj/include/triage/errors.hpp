#pragma once

#include <stdexcept>
#include <string>

namespace triage {

enum class Errc {
    missing_file,
    header_parse_error,
    size_mismatch,
    io_error,
    invalid_orientation_code,
    negative_radius,
    empty_lungs,
    empty_component,
    empty_node,
    schema_mismatch,
    single_class_data,
    degenerate_data,
    non_finite_feature,
    too_few_per_class,
    empty_input,
    lesion_outside_lungs,
    extraction_rejected,
    bad_config,
    parse_error,
    usage_error,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::missing_file: return "MissingFile";
        case Errc::header_parse_error: return "HeaderParseError";
        case Errc::size_mismatch: return "SizeMismatch";
        case Errc::io_error: return "IoError";
        case Errc::invalid_orientation_code: return "InvalidOrientationCode";
        case Errc::negative_radius: return "NegativeRadius";
        case Errc::empty_lungs: return "EmptyLungs";
        case Errc::empty_component: return "EmptyComponent";
        case Errc::empty_node: return "EmptyNode";
        case Errc::schema_mismatch: return "SchemaMismatch";
        case Errc::single_class_data: return "SingleClassData";
        case Errc::degenerate_data: return "DegenerateData";
        case Errc::non_finite_feature: return "NonFiniteFeature";
        case Errc::too_few_per_class: return "TooFewPerClass";
        case Errc::empty_input: return "EmptyInput";
        case Errc::lesion_outside_lungs: return "LesionOutsideLungs";
        case Errc::extraction_rejected: return "ExtractionRejected";
        case Errc::bad_config: return "BadConfig";
        case Errc::parse_error: return "ParseError";
        case Errc::usage_error: return "UsageError";
    }
    return "Error";
}

} // namespace triage
