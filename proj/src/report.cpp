#include "cdw/report.hpp"

#include "cdw/errors.hpp"

namespace cdw {

const char* error_kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidLetter: return "InvalidLetter";
        case ErrorKind::InvalidDescriptor: return "InvalidDescriptor";
        case ErrorKind::DepthTooSmall: return "DepthTooSmall";
        case ErrorKind::NonMinimalTimeout: return "NonMinimalTimeout";
        case ErrorKind::SameOrbitDetected: return "SameOrbitDetected";
        case ErrorKind::HorizonExceeded: return "HorizonExceeded";
        case ErrorKind::HypothesisViolated: return "HypothesisViolated";
        case ErrorKind::HypothesisFailed: return "HypothesisFailed";
        case ErrorKind::NotCompatible: return "NotCompatible";
        case ErrorKind::NoMatching: return "NoMatching";
        case ErrorKind::IncoherentFragment: return "IncoherentFragment";
        case ErrorKind::NoWitness: return "NoWitness";
        case ErrorKind::ChoiceExhausted: return "ChoiceExhausted";
        case ErrorKind::Unsupported: return "Unsupported";
        case ErrorKind::Internal: return "Internal";
    }
    return "UnknownError";
}

nlohmann::json Report::to_json() const {
    nlohmann::json checks = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json c{{"check", e.check}, {"ok", e.ok}};
        if (!e.detail.empty()) c["detail"] = e.detail;
        checks.push_back(c);
    }
    return nlohmann::json{{"subject", subject}, {"ok", ok()}, {"checks", checks}};
}

}  // namespace cdw
