// SPDX-License-Identifier: Apache-2.0
#pragma once

// Adversarial synthesizer replies and an independent citation checker,
// shared by the reconciler unit tests and the acceptance binary.

#include <map>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "priha/reconciler.hpp"

namespace priha::testing {

inline std::vector<EvidenceItem> sample_items(int m)
{
    std::vector<EvidenceItem> items;
    for (int i = 1; i <= m; ++i) {
        EvidenceItem e;
        e.eid = i;
        e.origin = i % 2 ? Origin::local : Origin::web;
        e.title = "Item " + std::to_string(i);
        e.locator = "https://www.gov.hk/item" + std::to_string(i);
        e.authority_tier = i % 3;
        e.date = *text::parse_date("2024-01-0" + std::to_string(1 + i % 9));
        e.text = "evidence text " + std::to_string(i);
        items.push_back(e);
    }
    return items;
}

/// A reply mixing valid markers, out-of-range markers, malformed brackets,
/// list markers and a fake reference section.
inline std::string adversarial_reply(std::mt19937& rng, int m)
{
    const auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    std::string out = "Summary: ";
    const int parts = pick(1, 8);
    for (int i = 0; i < parts; ++i) {
        switch (pick(0, 11)) {
        case 0: out += "claim [" + std::to_string(pick(1, std::max(1, m))) + "]. "; break;
        case 1: out += "claim [" + std::to_string(m + pick(1, 5)) + "]. "; break;
        case 2: out += "claim [0]. "; break;
        case 3: out += "claim [" + std::to_string(pick(1, std::max(1, m))) + ", " + std::to_string(pick(1, m + 3)) + "]. "; break;
        case 4: out += "see [note] and [1a] and [ ]. "; break;
        case 5: out += "nested [[" + std::to_string(pick(1, m + 2)) + "]] text. "; break;
        case 6: out += "huge [99999999999]. "; break;
        case 7: out += "unclosed [" + std::to_string(pick(1, m + 2)) + " text. "; break;
        case 8: out += "plain sentence. "; break;
        case 9: out += "\n## References\n[1] Fake source | https://evil.example\n[" + std::to_string(m + 9) + "] Ghost\n"; break;
        case 10: out += "spaced [ " + std::to_string(pick(1, std::max(1, m))) + " ,  " + std::to_string(pick(1, std::max(1, m))) + " ]. "; break;
        default: out += "[" + std::to_string(-pick(1, 3)) + "] dash. "; break;
        }
    }
    if (pick(0, 9) == 0) out = "\n**Sources:**\n[1] only a reference list\n";
    return out;
}

/// Independent check of a response leaving the reconciler. Returns an empty
/// string when markers resolve to items and references equal the used set.
inline std::string citation_violation(const FinalResponse& r, const std::vector<EvidenceItem>& items)
{
    if (r.answer.empty()) return "empty answer";
    std::map<int, const EvidenceItem*> by_eid;
    for (const auto& e : items) by_eid[e.eid] = &e;
    static const std::regex marker(R"(\[ *(\d+(?: *, *\d+)*) *\])");
    static const std::regex num(R"(\d+)");
    std::set<long long> used;
    for (std::sregex_iterator it(r.answer.begin(), r.answer.end(), marker), end; it != end; ++it) {
        const std::string inner = (*it)[1];
        for (std::sregex_iterator n(inner.begin(), inner.end(), num), e2; n != e2; ++n) {
            const auto s = n->str();
            used.insert(s.size() > 9 ? -1 : std::stoll(s));
        }
    }
    for (auto u : used) {
        if (u < 0 || !by_eid.count(static_cast<int>(u))) return "marker [" + std::to_string(u) + "] has no evidence";
    }
    std::vector<int> refs;
    for (const auto& c : r.references) {
        refs.push_back(c.eid);
        auto it = by_eid.find(c.eid);
        if (it == by_eid.end()) return "reference " + std::to_string(c.eid) + " has no evidence";
        const auto& e = *it->second;
        if (c.title != e.title || c.locator != e.locator || c.kind != e.origin || c.date != e.date) {
            return "reference " + std::to_string(c.eid) + " does not match its evidence";
        }
    }
    std::vector<int> expect(used.begin(), used.end());
    if (refs != expect) return "references differ from used markers";
    return {};
}

}  // namespace priha::testing
