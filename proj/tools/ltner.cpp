// Command-line front end: ingest, index, run, ablate-tags, ablate-roles,
// sweep, score, report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "ltner/errors.hpp"
#include "ltner/harness.hpp"

namespace fs = std::filesystem;
using namespace ltner;

namespace {

constexpr int kExitPartial = 3;

// Options shared by the experiment commands; each maps onto a config key.
struct ConfigOptions {
    std::string config_path;
    std::vector<std::string> sets;
    std::map<std::string, std::string> shortcuts;
    bool fall_through = false;
    bool print_config = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "JSON config file");
        cmd->add_option("--set", sets, "Override any config key: key=value");
        const std::pair<const char*, const char*> keys[] = {
            {"--corpus", "corpus"},         {"--index", "index"},       {"--embedder", "embedder"},
            {"--shots", "shots"},           {"--tag", "tag"},           {"--format", "format"},
            {"--role", "role"},             {"--instruction", "instruction"},
            {"--ordering", "ordering"},     {"--model", "model"},       {"--backend", "backend"},
            {"--mock", "mock_responder"},   {"--cache-dir", "cache_dir"},
            {"--base-url", "base_url"},     {"--seed", "seed"},         {"--concurrency", "concurrency"},
            {"--rpm", "requests_per_minute"}, {"--cost-cap", "cost_cap"}, {"--limit-test", "limit_test"},
            {"--budget", "pool_budget"},    {"--temperature", "temperature"},
            {"--max-attempts", "max_attempts"}, {"--out", "output_dir"},
            {"--neighbors-cache", "neighbors_cache"}};
        for (const auto& [flag, key] : keys) {
            cmd->add_option_function<std::string>(
                flag, [this, k = std::string(key)](const std::string& v) { shortcuts[k] = v; },
                std::string("Config key ") + key);
        }
        cmd->add_flag("--fall-through", fall_through, "Replay misses go to the live API");
        cmd->add_flag("--print-config", print_config, "Print the resolved config and exit");
    }

    RunConfig resolve() const {
        RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
        for (const auto& [k, v] : shortcuts) cfg.set(k, v);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + s + "'");
            cfg.set(s.substr(0, eq), s.substr(eq + 1));
        }
        if (fall_through) cfg.fall_through = true;
        return cfg;
    }
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void print_outcome(const RunOutcome& o) {
    std::cout << report_to_text(o.report) << "total cost: " << o.total_cost.to_string() << '\n';
    if (o.partial) std::cout << "PARTIAL: " << o.halt_reason << '\n';
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw ArgumentError("cannot write " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot named entity recognition with a chat LLM"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Convert CoNLL column files into a corpus JSONL");
    std::string train_path, dev_path, test_path, ingest_out, ingest_schema = "conll2003", ingest_prefix;
    ingest->add_option("--train", train_path, "Training split file")->check(CLI::ExistingFile);
    ingest->add_option("--dev", dev_path, "Development split file")->check(CLI::ExistingFile);
    ingest->add_option("--test", test_path, "Test split file")->check(CLI::ExistingFile);
    ingest->add_option("--schema", ingest_schema, "conll2003, wnut2017 or a comma-separated label list");
    ingest->add_option("--prefix", ingest_prefix, "Sentence id prefix (default: schema dataset)");
    ingest->add_option("-o,--out", ingest_out, "Output corpus JSONL")->required();

    // index
    auto* index_cmd = app.add_subcommand("index", "Embed the training split into a retrieval index");
    std::string index_corpus, index_out, index_embedder = "hash", index_model = "text-embedding-3-small",
                                         index_base_url = "https://api.openai.com/v1";
    std::size_t index_concurrency = 4;
    index_cmd->add_option("--corpus", index_corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
    index_cmd->add_option("--embedder", index_embedder, "hash, hashN or remote");
    index_cmd->add_option("--embedding-model", index_model, "Remote embedding model");
    index_cmd->add_option("--base-url", index_base_url, "Remote API base URL");
    index_cmd->add_option("--concurrency", index_concurrency, "Embedding calls in flight");
    index_cmd->add_option("-o,--out", index_out, "Output index file")->required();

    // run / ablations / sweep
    ConfigOptions run_opts, tag_opts, role_opts, sweep_opts;
    auto* run = app.add_subcommand("run", "Run one configuration over the test split");
    run_opts.attach(run);

    auto* ablate_tags_cmd = app.add_subcommand("ablate-tags", "Run every tag preset");
    tag_opts.attach(ablate_tags_cmd);
    std::string tag_list;
    ablate_tags_cmd->add_option("--tags", tag_list, "Comma-separated tag names (default: all presets)");

    auto* ablate_roles_cmd = app.add_subcommand("ablate-roles", "Run every role setting");
    role_opts.attach(ablate_roles_cmd);
    std::string role_list;
    ablate_roles_cmd->add_option("--roles", role_list, "Comma-separated role codes (default: the role grid)");

    auto* sweep_cmd = app.add_subcommand("sweep", "Vary one dimension: shots, budget or cost_cap");
    sweep_opts.attach(sweep_cmd);
    std::string sweep_dim = "shots", sweep_values;
    sweep_cmd->add_option("--dim", sweep_dim, "shots | budget | cost_cap");
    sweep_cmd->add_option("--values", sweep_values, "Comma-separated ascending values");

    // score
    auto* score_cmd = app.add_subcommand("score", "Score a records file against gold");
    std::string score_records_path, score_corpus, score_json;
    score_cmd->add_option("--records", score_records_path, "records.jsonl")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--corpus", score_corpus, "Corpus JSONL with gold spans")->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--json", score_json, "Also write the report as JSON");

    // report
    auto* report_cmd = app.add_subcommand("report", "Aggregate run directories by a config key");
    std::vector<std::string> report_runs;
    std::string group_by = "tag", report_json;
    report_cmd->add_option("runs", report_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
    report_cmd->add_option("--group-by", group_by, "Config key to group on");
    report_cmd->add_option("--json", report_json, "Also write the rows as JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            const LabelSchema schema = LabelSchema::from_spec(ingest_schema);
            const std::string prefix = ingest_prefix.empty() ? schema.dataset() : ingest_prefix;
            if (train_path.empty() && dev_path.empty() && test_path.empty())
                throw ArgumentError("ingest needs at least one of --train, --dev, --test");
            std::vector<std::pair<fs::path, Split>> files;
            if (!train_path.empty()) files.emplace_back(train_path, Split::Train);
            if (!dev_path.empty()) files.emplace_back(dev_path, Split::Dev);
            if (!test_path.empty()) files.emplace_back(test_path, Split::Test);
            const auto all = ingest_files(files, schema, prefix);
            std::cout << "schema " << schema.dataset() << ":";
            for (const auto& name : schema.names()) std::cout << ' ' << name;
            std::cout << '\n';
            write_corpus(ingest_out, all);
            const auto stats = corpus_stats(all);
            for (const auto& [split, n] : stats.sentences_per_split) std::cout << split << ": " << n << " sentences\n";
            for (const auto& [label, n] : stats.entities_per_type) std::cout << label << ": " << n << " entities\n";
            std::cout << "tokens: " << stats.tokens << '\n';
            return 0;
        }
        if (*index_cmd) {
            std::vector<LabeledExample> train;
            for (auto& ex : read_corpus(index_corpus)) {
                if (ex.split() == Split::Train) train.push_back(std::move(ex));
            }
            RemoteEmbedderOptions remote;
            remote.base_url = index_base_url;
            remote.model = index_model;
            const auto embedder = make_embedder(index_embedder, remote);
            const FlatIndex index = build_index(train, *embedder, index_concurrency);
            save_index(index, index_out);
            std::cout << "indexed " << index.size() << " sentences, dim " << index.dim() << ", embedder "
                      << index.embedder() << "\nfingerprint " << index.fingerprint() << '\n';
            return 0;
        }
        auto prepare = [](const ConfigOptions& opts, RunConfig& cfg) {
            cfg = opts.resolve();
            if (opts.print_config) {
                std::cout << cfg.to_json().dump(2) << '\n';
                return false;
            }
            cfg.validate();
            if (!RoleSetting(cfg.role).in_grid())
                std::cerr << "warning: role " << cfg.role << " is outside the standard role grid\n";
            return true;
        };
        if (*run) {
            RunConfig cfg;
            if (!prepare(run_opts, cfg)) return 0;
            const fs::path npath =
                cfg.neighbors_cache.empty() ? fs::path(cfg.output_dir) / "neighbors.jsonl" : fs::path(cfg.neighbors_cache);
            const Experiment exp = prepare_experiment(cfg, cfg.shots, npath);
            auto backend = make_backend(cfg, exp);
            const RunOutcome o = run_experiment(cfg, exp, *backend, cfg.output_dir);
            print_outcome(o);
            std::cout << "records: " << (fs::path(cfg.output_dir) / "records.jsonl").string() << '\n';
            return o.partial ? kExitPartial : 0;
        }
        if (*ablate_tags_cmd || *ablate_roles_cmd) {
            const bool tags = ablate_tags_cmd->parsed();
            RunConfig cfg;
            if (!prepare(tags ? tag_opts : role_opts, cfg)) return 0;
            GridResult g;
            if (tags) {
                std::vector<TagConfig> presets;
                if (tag_list.empty()) presets = tag_presets();
                else
                    for (const auto& name : split_list(tag_list)) presets.push_back(tag_config_by_name(name));
                g = ablate_tags(cfg, presets);
            } else {
                g = ablate_roles(cfg, role_list.empty() ? RoleSetting::grid() : split_list(role_list));
            }
            std::cout << grid_to_text(g, tags ? "tag" : "role");
            bool failed = !g.content_identical;
            for (const auto& r : g.rows) failed = failed || !r.error.empty();
            return failed ? kExitPartial : 0;
        }
        if (*sweep_cmd) {
            RunConfig cfg;
            if (!prepare(sweep_opts, cfg)) return 0;
            const auto dim = sweep_dimension_from_string(sweep_dim);
            const auto values = sweep_values.empty() ? default_sweep_values(dim) : split_list(sweep_values);
            const auto points = sweep(cfg, dim, values);
            std::cout << sweep_to_csv(points);
            bool failed = false;
            for (const auto& p : points) {
                if (!p.error.empty()) {
                    std::cerr << sweep_dim << "=" << p.value << ": " << p.error << '\n';
                    failed = true;
                }
            }
            return failed ? kExitPartial : 0;
        }
        if (*score_cmd) {
            const auto rep = score_records(read_records(score_records_path), read_corpus(score_corpus));
            std::cout << report_to_text(rep);
            if (!score_json.empty()) write_or_print(score_json, report_to_json(rep).dump(2) + "\n");
            return 0;
        }
        if (*report_cmd) {
            std::vector<fs::path> dirs(report_runs.begin(), report_runs.end());
            const auto rows = aggregate_runs(dirs, group_by);
            std::cout << rows_to_text(rows, group_by);
            if (!report_json.empty()) write_or_print(report_json, rows_to_json(rows).dump(2) + "\n");
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
