#include "ltner/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "ltner/errors.hpp"

namespace ltner {

namespace {

Role role_from_letter(char c) {
    switch (c) {
        case 'S': return Role::System;
        case 'U': return Role::User;
        case 'A': return Role::Assistant;
        default: throw ArgumentError(std::string("role letter '") + c + "' is not one of S, U, A");
    }
}

bool is_ident(char c) { return std::islower(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

std::string_view to_string(Role r) {
    switch (r) {
        case Role::System: return "system";
        case Role::User: return "user";
        case Role::Assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(std::string_view s) {
    if (s == "system") return Role::System;
    if (s == "user") return Role::User;
    if (s == "assistant") return Role::Assistant;
    throw ArgumentError("unknown role '" + std::string(s) + "'");
}

RoleSetting::RoleSetting(std::string_view code) : code_(code) {
    if (code_.size() != 3) throw ArgumentError("role code '" + code_ + "' must have 3 letters");
    for (std::size_t i = 0; i < 3; ++i) roles_[i] = role_from_letter(code_[i]);
}

const std::vector<std::string>& RoleSetting::grid() {
    static const std::vector<std::string> codes = {"UUU", "AAA", "SUU", "SAA", "SUA", "AUA", "UUA"};
    return codes;
}

bool RoleSetting::in_grid() const {
    const auto& g = grid();
    return std::find(g.begin(), g.end(), code_) != g.end();
}

std::string_view to_string(ShotOrdering o) { return o == ShotOrdering::SimilarLast ? "similar-last" : "similar-first"; }

ShotOrdering shot_ordering_from_string(std::string_view s) {
    if (s == "similar-last") return ShotOrdering::SimilarLast;
    if (s == "similar-first") return ShotOrdering::SimilarFirst;
    throw ArgumentError("unknown ordering '" + std::string(s) + "' (similar-last|similar-first)");
}

std::string render_instruction(const PromptPlan& plan, const LabelSchema& schema, const TagConfig& cfg) {
    std::string labels;
    for (const auto& n : schema.names()) {
        if (!labels.empty()) labels += ", ";
        labels += n;
    }
    const std::string& t = plan.instruction;
    std::string out;
    out.reserve(t.size() + 64);
    for (std::size_t i = 0; i < t.size();) {
        if (t[i] == '{') {
            std::size_t j = i + 1;
            while (j < t.size() && is_ident(t[j])) ++j;
            if (j > i + 1 && j < t.size() && t[j] == '}') {
                const std::string_view name(t.data() + i + 1, j - i - 1);
                if (name == "labels") out += labels;
                else if (name == "tag_open") out += cfg.open;
                else if (name == "tag_close") out += cfg.close;
                else throw ArgumentError("unknown template placeholder {" + std::string(name) + "}");
                i = j + 1;
                continue;
            }
        }
        out += t[i++];
    }
    return out;
}

std::string render_answer(const LabeledExample& ex, OutputFormat format, const TagConfig& cfg) {
    return format == OutputFormat::Tag ? encode_tagged(ex, cfg) : encode_json_answer(ex);
}

std::vector<ChatMessage> build_messages(const PromptPlan& plan, const LabelSchema& schema, const RoleSetting& role,
                                        const TagConfig& cfg, const std::vector<const LabeledExample*>& examples,
                                        std::string_view query_sentence) {
    if (query_sentence.empty()) throw ArgumentError("query sentence is empty");
    std::string instruction = render_instruction(plan, schema, cfg);
    if (instruction.empty()) throw ArgumentError("instruction renders to an empty message");

    const std::size_t n = std::min(plan.shots, examples.size());
    std::vector<ChatMessage> out;
    out.reserve(2 * n + 2);
    out.push_back({role.instruction(), std::move(instruction)});
    auto add_shot = [&](const LabeledExample& ex) {
        out.push_back({role.input(), ex.sentence()});
        out.push_back({role.output(), render_answer(ex, plan.format, cfg)});
    };
    if (plan.ordering == ShotOrdering::SimilarLast) {
        for (std::size_t i = n; i-- > 0;) add_shot(*examples[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) add_shot(*examples[i]);
    }
    out.push_back({role.input(), std::string(query_sentence)});
    return out;
}

std::string load_template(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read instruction template " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string s = ss.str();
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

nlohmann::json messages_to_json(const std::vector<ChatMessage>& messages) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : messages) arr.push_back({{"role", std::string(to_string(m.role))}, {"content", m.content}});
    return arr;
}

}  // namespace ltner
