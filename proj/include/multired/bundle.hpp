#pragma once

#include <json.hpp>

#include "problem.hpp"

namespace multired {

namespace detail {

inline std::string lowered_str(const Expr& e, const std::optional<ReductionMap>& m) {
    if (!m) return e.str();
    auto l = lower(e, *m);
    return (l ? *l : e).str();
}

}  // namespace detail

inline nlohmann::json to_json(const CheckItem& i) {
    return {{"branch", i.branch}, {"check", i.what}, {"pass", i.pass}, {"detail", i.detail}};
}

inline nlohmann::json to_json(const LawResult& l, const PdeSystem& sys, const std::optional<ReductionMap>& m) {
    nlohmann::json cur = nlohmann::json::object();
    for (auto& [v, c] : l.current.components) cur[v.name()] = c.str();
    nlohmann::json j{{"multiplier", l.multiplier.str()},
                     {"reported", l.reported.str()},
                     {"current", cur},
                     {"conserved", l.conserved},
                     {"residual", clear_sum_denominators(l.current.divergence() - l.multiplier * sys.G()).str()}};
    if (m) {
        j["first_integral"] = l.psi_display.str();
        j["lambda"] = detail::lowered_str(l.lambda, m);
        j["exact"] = l.exact;
        j["routes_agree"] = l.routes_agree;
        j["numeric"] = {{"points", l.numeric.points},
                        {"skipped", l.numeric.skipped},
                        {"max_relative", static_cast<double>(l.numeric.max_relative)},
                        {"passed", l.numeric.passed()}};
    }
    if (!l.error.empty()) j["error"] = l.error;
    return j;
}

inline nlohmann::json to_json(const ResultBundle& r, const Problem& p, const DiffReport* report = nullptr) {
    using nlohmann::json;
    auto names = [](const std::vector<Symbol>& v) {
        json a = json::array();
        for (auto s : v) a.push_back(s.name());
        return a;
    };
    json defs = json::object();
    for (auto& [n, e] : p.ctx.definitions) defs[n] = e.str();
    json out{{"problem", r.problem},
             {"seconds", r.seconds},
             {"seed", reduce_seed()},
             {"basis_size", r.basis_size},
             {"variables",
              {{"independent", names(p.ctx.independents)},
               {"dependent", names(p.ctx.dependents)},
               {"parameters", names(p.ctx.parameters)},
               {"definitions", defs}}},
             {"pde", {{"lead", p.sys.lead.str()}, {"rhs", p.sys.rhs.str()}, {"measure", p.measure.str()}}}};
    json branches = json::array();
    for (auto& b : r.branches) {
        json constraints = json::array(), nonzero = json::array(), sub = json::object();
        for (auto& c : b.branch.constraints) (c.nonzero ? nonzero : constraints).push_back(c.lhs.str());
        for (auto& [v, e] : b.substitution) sub[v.name()] = e.str();
        json laws = json::array();
        PdeSystem sys = specialize(p.sys, b.substitution);
        for (auto& l : b.laws) laws.push_back(to_json(l, sys, b.ode ? b.map : std::nullopt));
        json jb{{"key", b.key},
                {"constraints", constraints},
                {"nonzero", nonzero},
                {"substitution", sub},
                {"unresolved", b.branch.unresolved},
                {"laws", laws}};
        if (!b.branch.note.empty()) jb["note"] = b.branch.note;
        if (b.ode && b.map) {
            json canon = json::object();
            for (size_t i = 0; i < b.map->canonical.size(); ++i)
                canon[b.map->canonical[i].name()] = b.map->canonical_exprs[i].str();
            jb["reduction"] = {{"variable", b.map->zeta_var.name()},
                               {"dependent", (b.map->lowered ? b.map->lowered_dep : b.map->new_dep).name()},
                               {"lowered", b.map->lowered},
                               {"zeta", b.map->zeta.str()},
                               {"U", b.map->U_def.str()},
                               {"canonical", canon},
                               {"ode", b.ode_display.str()},
                               {"order", b.ode->order - b.map->lowered},
                               {"weight", b.ode->weight.str()}};
        }
        if (b.independence) {
            json rel = json::array();
            for (auto& e : b.independence->relations) rel.push_back(e.str());
            jb["independence"] = {{"rank", b.independence->rank}, {"relations", rel}};
        }
        if (!b.error.empty()) jb["error"] = b.error;
        branches.push_back(jb);
    }
    out["branches"] = branches;
    if (report) {
        json items = json::array();
        for (auto& i : report->items) items.push_back(to_json(i));
        out["expected"] = {{"passed", report->passed()}, {"checks", items}};
    }
    return out;
}

}  // namespace multired
