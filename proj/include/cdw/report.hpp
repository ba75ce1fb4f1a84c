#pragma once

#include <string>
#include <vector>

#include "vendor_json.hpp"

namespace cdw {

// Verification result: one entry per checked identity. Failures are data,
// not exceptions; callers decide how to react.
struct CheckEntry {
    std::string check;
    bool ok = true;
    std::string detail;
};

struct Report {
    std::string subject;
    std::vector<CheckEntry> entries;

    bool ok() const {
        for (const auto& e : entries)
            if (!e.ok) return false;
        return true;
    }

    void pass(const std::string& check) { entries.push_back({check, true, ""}); }
    void fail(const std::string& check, const std::string& detail) {
        entries.push_back({check, false, detail});
    }
    void require(const std::string& check, bool cond, const std::string& detail = "") {
        if (cond)
            pass(check);
        else
            fail(check, detail);
    }

    std::vector<std::string> failures() const {
        std::vector<std::string> out;
        for (const auto& e : entries)
            if (!e.ok) out.push_back(e.check + (e.detail.empty() ? "" : " (" + e.detail + ")"));
        return out;
    }

    nlohmann::json to_json() const;
};

}  // namespace cdw
