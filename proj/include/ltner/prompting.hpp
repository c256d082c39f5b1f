#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "ltner/corpus.hpp"
#include "ltner/marking.hpp"

namespace ltner {

enum class Role { System, User, Assistant };

std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

/// Three-letter code over {S,U,A}: (instruction, input, output) roles.
class RoleSetting {
public:
    explicit RoleSetting(std::string_view code);

    const std::string& code() const { return code_; }
    Role instruction() const { return roles_[0]; }
    Role input() const { return roles_[1]; }
    Role output() const { return roles_[2]; }
    /// True for the seven settings of the role ablation grid.
    bool in_grid() const;

    static const std::vector<std::string>& grid();

    bool operator==(const RoleSetting& o) const { return code_ == o.code_; }

private:
    std::string code_;
    std::array<Role, 3> roles_{};
};

struct ChatMessage {
    Role role;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

enum class ShotOrdering { SimilarLast, SimilarFirst };
std::string_view to_string(ShotOrdering o);
ShotOrdering shot_ordering_from_string(std::string_view s);

struct PromptPlan {
    std::string instruction;  // template with {labels}, {tag_open}, {tag_close}
    std::size_t shots = 30;
    ShotOrdering ordering = ShotOrdering::SimilarLast;
    OutputFormat format = OutputFormat::Tag;
};

/// Substitutes {labels} (comma-joined schema names), {tag_open} and
/// {tag_close} in one pass. Any other {identifier} is an error; braces that
/// do not enclose an identifier are literal.
std::string render_instruction(const PromptPlan& plan, const LabelSchema& schema, const TagConfig& cfg);

/// [instruction] ++ (example sentence, example answer) * N ++ [query], with
/// `examples` ranked most-similar first. Content never depends on `role`.
std::vector<ChatMessage> build_messages(const PromptPlan& plan, const LabelSchema& schema, const RoleSetting& role,
                                        const TagConfig& cfg, const std::vector<const LabeledExample*>& examples,
                                        std::string_view query_sentence);

/// Answer text an example contributes under the plan's output format.
std::string render_answer(const LabeledExample& ex, OutputFormat format, const TagConfig& cfg);

std::string load_template(const std::string& path);

nlohmann::json messages_to_json(const std::vector<ChatMessage>& messages);

}  // namespace ltner
