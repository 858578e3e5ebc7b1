#include "drophead/analysis.hpp"

#include <fstream>

#include <json.hpp>

namespace drophead {

namespace {

std::string stack_name(StackId s) { return s == StackId::encoder ? "encoder" : "decoder"; }

nlohmann::json entry_json(const AblationEntry& e) {
    return {{"stack", stack_name(e.site.stack)}, {"layer", e.site.layer},
            {"type", to_string(e.site.type)},   {"head", e.head},
            {"acc", e.acc},                     {"loss", e.loss},
            {"delta_acc", e.delta_acc}};
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

}  // namespace

void write_ablation_report_json(const AblationReport& report, const std::string& path) {
    nlohmann::json j;
    j["baseline"] = {{"acc", report.baseline.accuracy}, {"loss", report.baseline.loss}};
    j["grid"] = nlohmann::json::array();
    for (const auto& e : report.grid) j["grid"].push_back(entry_json(e));
    j["per_type"] = nlohmann::json::array();
    for (const auto& t : report.per_type) {
        nlohmann::json tj;
        tj["type"] = to_string(t.type);
        tj["avg_dominant_delta"] = t.avg_dominant_delta;
        tj["dominant_per_layer"] = nlohmann::json::array();
        for (const auto& e : t.dominant_per_layer) tj["dominant_per_layer"].push_back(entry_json(e));
        j["per_type"].push_back(tj);
    }
    open_out(path) << j.dump(2) << '\n';
}

void write_ablation_report_csv(const AblationReport& report, const std::string& path) {
    auto f = open_out(path);
    f << "stack,layer,type,head,acc,loss,delta_acc\n";
    f.precision(17);
    for (const auto& e : report.grid) {
        f << stack_name(e.site.stack) << ',' << e.site.layer << ',' << to_string(e.site.type)
          << ',' << e.head << ',' << e.acc << ',' << e.loss << ',' << e.delta_acc << '\n';
    }
}

void write_importance_json(const std::vector<HeadImportance>& scores, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : scores) {
        j.push_back({{"stack", stack_name(s.site.stack)},
                     {"layer", s.site.layer},
                     {"type", to_string(s.site.type)},
                     {"head", s.head},
                     {"score", s.score},
                     {"score_norm", s.score_norm}});
    }
    open_out(path) << j.dump(2) << '\n';
}

void write_importance_csv(const std::vector<HeadImportance>& scores, const std::string& path) {
    auto f = open_out(path);
    f << "stack,layer,type,head,score,score_norm\n";
    f.precision(17);
    for (const auto& s : scores) {
        f << stack_name(s.site.stack) << ',' << s.site.layer << ',' << to_string(s.site.type)
          << ',' << s.head << ',' << s.score << ',' << s.score_norm << '\n';
    }
}

void write_pruning_json(const std::vector<PrunePoint>& curve, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : curve) {
        j.push_back({{"fraction", p.fraction},
                     {"heads_pruned", p.heads_pruned},
                     {"acc", p.acc},
                     {"loss", p.loss},
                     {"pinned_sites", p.pinned_sites}});
    }
    open_out(path) << j.dump(2) << '\n';
}

void write_pruning_csv(const std::vector<PrunePoint>& curve, const std::string& path) {
    auto f = open_out(path);
    f << "fraction,heads_pruned,acc,loss,pinned_sites\n";
    f.precision(17);
    for (const auto& p : curve) {
        f << p.fraction << ',' << p.heads_pruned << ',' << p.acc << ',' << p.loss << ',';
        for (std::size_t i = 0; i < p.pinned_sites.size(); ++i) {
            if (i) f << ';';
            f << p.pinned_sites[i];
        }
        f << '\n';
    }
}

}  // namespace drophead
