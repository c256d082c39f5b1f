#include "ltner/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ltner/digest.hpp"
#include "ltner/errors.hpp"

namespace ltner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kTagInstruction =
    "You are an expert annotator for named entity recognition.\n"
    "Entity types: {labels}.\n"
    "Reproduce the input text verbatim, inserting tags only. Mark every entity mention in place as "
    "{tag_open}mention{tag_close}TYPE, where TYPE is one of the entity types above and follows "
    "{tag_close} with no space in between. Leave all other text unchanged.";

const std::string kJsonInstruction =
    "You are an expert annotator for named entity recognition.\n"
    "Entity types: {labels}.\n"
    "Answer with a single JSON object that maps each entity type found in the input text to the list "
    "of its mentions, copied exactly from the text in order of appearance. Output nothing but the JSON object.";

constexpr const char* kNeighborsFormat = "ltner-neighbors";

json optional_to_json(const std::optional<Money>& m) { return m ? json(m->to_string()) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write " + path.string());
    out << text;
}

std::string dump(const json& j, int indent = -1) {
    return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

std::string content_digest(const std::vector<ChatMessage>& messages) {
    json arr = json::array();
    for (const auto& m : messages) arr.push_back(m.content);
    return sha256_hex(canonical_dump(arr));
}

std::string fmt_pct(double x) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * x;
    return os.str();
}

}  // namespace

const std::string& default_instruction(OutputFormat format) {
    return format == OutputFormat::Tag ? kTagInstruction : kJsonInstruction;
}

std::vector<LabeledExample> ingest_files(const std::vector<std::pair<fs::path, Split>>& files,
                                         const LabelSchema& schema, const std::string& id_prefix) {
    if (files.empty()) throw ArgumentError("nothing to ingest");
    std::vector<LabeledExample> all;
    std::set<std::string> ids;
    for (const auto& [path, split] : files) {
        auto part = parse_iob_file(path, schema, {id_prefix, split});
        if (part.empty()) throw ParseError(path.string() + ": no sentences");
        for (auto& ex : part) {
            if (!ids.insert(ex.id()).second) throw ArgumentError("duplicate sentence id " + ex.id());
            all.push_back(std::move(ex));
        }
    }
    return all;
}

json RunConfig::to_json() const {
    return {{"dataset", dataset},
            {"schema", schema},
            {"corpus", corpus},
            {"index", index},
            {"embedder", embedder},
            {"embedding_model", embedding_model},
            {"shots", shots},
            {"tag", tag},
            {"format", format},
            {"role", role},
            {"instruction", instruction},
            {"ordering", ordering},
            {"model", model},
            {"backend", backend},
            {"mock_responder", mock_responder},
            {"cache_dir", cache_dir},
            {"fall_through", fall_through},
            {"base_url", base_url},
            {"prices", prices.to_json()},
            {"seed", seed},
            {"concurrency", concurrency},
            {"requests_per_minute", requests_per_minute},
            {"cost_cap", optional_to_json(cost_cap)},
            {"limit_test", limit_test},
            {"pool_budget", pool_budget ? json(*pool_budget) : json(nullptr)},
            {"temperature", temperature},
            {"max_output_tokens", max_output_tokens},
            {"max_attempts", max_attempts},
            {"output_dir", output_dir},
            {"neighbors_cache", neighbors_cache}};
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) throw ArgumentError("config must be a JSON object");
    RunConfig c;
    const json known = c.to_json();
    for (const auto& [key, v] : j.items()) {
        if (!known.contains(key)) throw ArgumentError("unknown config key '" + key + "'");
    }
    try {
        auto str = [&](const char* key, std::string& dst) {
            if (j.contains(key)) dst = j[key].get<std::string>();
        };
        str("dataset", c.dataset);
        str("schema", c.schema);
        str("corpus", c.corpus);
        str("index", c.index);
        str("embedder", c.embedder);
        str("embedding_model", c.embedding_model);
        str("tag", c.tag);
        str("format", c.format);
        str("role", c.role);
        str("instruction", c.instruction);
        str("ordering", c.ordering);
        str("model", c.model);
        str("backend", c.backend);
        str("mock_responder", c.mock_responder);
        str("cache_dir", c.cache_dir);
        str("base_url", c.base_url);
        str("output_dir", c.output_dir);
        str("neighbors_cache", c.neighbors_cache);
        if (j.contains("shots")) c.shots = j["shots"].get<std::size_t>();
        if (j.contains("fall_through")) c.fall_through = j["fall_through"].get<bool>();
        if (j.contains("prices")) c.prices = PriceTable::from_json(j["prices"]);
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("concurrency")) c.concurrency = j["concurrency"].get<std::size_t>();
        if (j.contains("requests_per_minute")) c.requests_per_minute = j["requests_per_minute"].get<double>();
        if (j.contains("cost_cap")) {
            const auto& v = j["cost_cap"];
            if (v.is_null()) c.cost_cap.reset();
            else if (v.is_string()) c.cost_cap = Money::parse(v.get<std::string>());
            else c.cost_cap = Money::parse(v.dump());
        }
        if (j.contains("limit_test")) c.limit_test = j["limit_test"].get<std::size_t>();
        if (j.contains("pool_budget")) {
            const auto& v = j["pool_budget"];
            if (v.is_null() || (v.is_string() && v.get<std::string>() == "full")) c.pool_budget.reset();
            else c.pool_budget = v.get<std::size_t>();
        }
        if (j.contains("temperature")) c.temperature = j["temperature"].get<double>();
        if (j.contains("max_output_tokens")) c.max_output_tokens = j["max_output_tokens"].get<std::size_t>();
        if (j.contains("max_attempts")) c.max_attempts = j["max_attempts"].get<int>();
    } catch (const json::exception& e) {
        throw ArgumentError(std::string("bad config value: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot read config " + path.string());
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ArgumentError("config " + path.string() + " is not valid JSON");
    return from_json(j);
}

void RunConfig::set(const std::string& key, const std::string& value) {
    json j = to_json();
    if (!j.contains(key)) throw ArgumentError("unknown config key '" + key + "'");
    json& slot = j[key];
    if (key == "cost_cap" || key == "pool_budget") {
        slot = (value.empty() || value == "none" || value == "full") ? json(nullptr) : json(value);
        if (key == "pool_budget" && !slot.is_null()) {
            try {
                slot = std::stoull(value);
            } catch (const std::exception&) {
                throw ArgumentError("pool_budget must be a count or 'full'");
            }
        }
    } else if (key == "prices") {
        slot = json::parse(value, nullptr, false);
        if (slot.is_discarded()) throw ArgumentError("prices must be JSON");
    } else if (slot.is_boolean()) {
        if (value != "true" && value != "false") throw ArgumentError(key + " must be true or false");
        slot = value == "true";
    } else if (slot.is_number()) {
        json parsed = json::parse(value, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_number()) throw ArgumentError(key + " must be a number");
        slot = parsed;
    } else {
        slot = value;
    }
    *this = from_json(j);
}

std::string RunConfig::fingerprint() const { return sha256_hex(canonical_dump(to_json())); }

PromptPlan RunConfig::prompt_plan() const {
    PromptPlan plan;
    plan.format = output_format_from_string(format);
    plan.instruction = instruction.empty() ? default_instruction(plan.format) : load_template(instruction);
    plan.shots = shots;
    plan.ordering = shot_ordering_from_string(ordering);
    return plan;
}

void RunConfig::validate() const {
    auto require_file = [](const std::string& what, const std::string& path) {
        if (!fs::exists(path)) throw ArgumentError(what + " '" + path + "' does not exist");
    };
    if (corpus.empty()) throw ArgumentError("corpus path is required");
    require_file("corpus", corpus);
    if (!index.empty()) require_file("index", index);
    if (!instruction.empty()) require_file("instruction template", instruction);

    const LabelSchema s = label_schema();
    const TagConfig t = tag_config();
    const auto fmt = output_format_from_string(format);
    if (fmt == OutputFormat::Tag) {
        const auto issues = validate_tag_config(t, s);
        if (!issues.empty())
            throw ArgumentError("tag config " + t.name + ": " + std::string(to_string(issues.front().kind)) + ": " +
                                issues.front().detail);
    }
    (void)RoleSetting(role);
    (void)shot_ordering_from_string(ordering);
    const auto kind = backend_kind_from_string(backend);
    if (kind == BackendKind::Mock && mock_responder != "echo-gold" && mock_responder != "echo-plain")
        throw ArgumentError("unknown mock responder '" + mock_responder + "' (echo-gold|echo-plain)");
    if (kind == BackendKind::Replay && cache_dir.empty()) throw ArgumentError("replay backend needs cache_dir");
    const bool reaches_live = kind == BackendKind::Live || (kind == BackendKind::Replay && fall_through);
    if (reaches_live && !(cost_cap && cost_cap->pico() > 0))
        throw ArgumentError("a positive cost_cap is required when requests may reach the live API");
    if (cost_cap && cost_cap->pico() <= 0) throw ArgumentError("cost_cap must be > 0");
    if (!prices.contains(model)) throw ArgumentError("no price for model '" + model + "'");
    if (concurrency == 0) throw ArgumentError("concurrency must be >= 1");
    if (!(temperature >= 0)) throw ArgumentError("temperature must be >= 0");
    if (max_attempts < 1) throw ArgumentError("max_attempts must be >= 1");
    if (max_output_tokens == 0) throw ArgumentError("max_output_tokens must be >= 1");
    if (requests_per_minute < 0) throw ArgumentError("requests_per_minute must be >= 0");
    if (pool_budget && *pool_budget == 0) throw ArgumentError("pool_budget must be >= 1");
    (void)prompt_plan();
}

void save_neighbors(const NeighborTable& table, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<std::string> ids;
    for (const auto& [id, _] : table.by_sentence) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArgumentError("cannot write neighbors " + path.string());
    out << dump({{"format", kNeighborsFormat}, {"index_fingerprint", table.index_fingerprint}, {"k", table.k}})
        << '\n';
    for (const auto& id : ids) {
        json arr = json::array();
        for (const auto& n : table.by_sentence.at(id)) arr.push_back({n.example_id, n.similarity});
        out << dump({{"id", id}, {"neighbors", arr}}) << '\n';
    }
}

std::optional<NeighborTable> load_neighbors(const fs::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line)) return std::nullopt;
    auto header = json::parse(line, nullptr, false);
    if (header.is_discarded() || header.value("format", "") != kNeighborsFormat) return std::nullopt;
    NeighborTable t;
    t.index_fingerprint = header.value("index_fingerprint", "");
    t.k = header.value("k", std::size_t{0});
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("neighbors")) return std::nullopt;
        std::vector<Neighbor> ns;
        for (const auto& n : j["neighbors"])
            ns.push_back({n.at(0).get<std::string>(), n.at(1).get<double>(), ns.size() + 1});
        t.by_sentence[j["id"].get<std::string>()] = std::move(ns);
    }
    return t;
}

NeighborTable compute_neighbors(const FlatIndex& index, const std::vector<LabeledExample>& queries,
                                const Embedder& embedder, std::size_t k, std::size_t concurrency) {
    NeighborTable t;
    t.index_fingerprint = index.fingerprint();
    t.k = std::min(k, index.size());
    if (t.k == 0) {
        for (const auto& q : queries) t.by_sentence[q.id()] = {};
        return t;
    }
    std::vector<std::string> texts;
    texts.reserve(queries.size());
    for (const auto& q : queries) texts.push_back(q.sentence());
    const auto vectors = embed_all(texts, embedder, concurrency);
    auto results = index.knn_batch(vectors, t.k);
    for (std::size_t i = 0; i < queries.size(); ++i) t.by_sentence[queries[i].id()] = std::move(results[i]);
    return t;
}

Experiment prepare_experiment(const RunConfig& cfg, std::size_t k, const fs::path& neighbors_path) {
    Experiment exp{cfg.label_schema(), {}, {}, nullptr, {}};
    for (auto& ex : read_corpus(cfg.corpus)) {
        for (const auto& s : ex.spans()) {
            if (!exp.schema.contains(s.label))
                throw LoadError("corpus sentence " + ex.id() + " has label '" + s.label + "' outside the schema");
        }
        if (ex.split() == Split::Train) exp.train.push_back(std::move(ex));
        else if (ex.split() == Split::Test) exp.test.push_back(std::move(ex));
    }
    if (cfg.limit_test && exp.test.size() > cfg.limit_test)
        exp.test.erase(exp.test.begin() + static_cast<std::ptrdiff_t>(cfg.limit_test), exp.test.end());

    RemoteEmbedderOptions remote;
    remote.base_url = cfg.base_url;
    remote.model = cfg.embedding_model;
    remote.retry.max_attempts = cfg.max_attempts;
    const auto embedder = make_embedder(cfg.embedder, remote);

    FlatIndex index = cfg.index.empty() ? build_index(exp.train, *embedder, cfg.concurrency) : load_index(cfg.index);
    if (index.embedder() != embedder->name())
        throw LoadError("index was built with embedder '" + index.embedder() + "' but the config uses '" +
                        embedder->name() + "'");
    std::set<std::string> test_ids;
    for (const auto& q : exp.test) test_ids.insert(q.id());
    for (const auto& r : index.records()) {
        if (r.example.split() != Split::Train || test_ids.count(r.example_id))
            throw LoadError("retrieval pool holds non-training sentence " + r.example_id);
    }
    if (cfg.pool_budget) {
        std::vector<LabeledExample> pool;
        for (const auto& r : index.records()) pool.push_back(r.example);
        std::vector<std::string> ids;
        for (const auto& ex : subsample_pool(pool, *cfg.pool_budget, cfg.seed)) ids.push_back(ex.id());
        index = index.subset(ids);
    }
    exp.index = std::make_shared<const FlatIndex>(std::move(index));

    fs::path npath = neighbors_path;
    if (npath.empty()) {
        if (!cfg.neighbors_cache.empty()) npath = cfg.neighbors_cache;
        else if (!cfg.output_dir.empty()) npath = fs::path(cfg.output_dir) / "neighbors.jsonl";
    }
    const std::string fp = exp.index->fingerprint();
    const std::size_t want = std::min(k, exp.index->size());
    if (!npath.empty()) {
        if (auto cached = load_neighbors(npath)) {
            bool ok = cached->index_fingerprint == fp && cached->k >= want;
            for (std::size_t i = 0; ok && i < exp.test.size(); ++i) ok = cached->by_sentence.count(exp.test[i].id()) > 0;
            if (ok) {
                exp.neighbors = std::move(*cached);
                return exp;
            }
        }
    }
    exp.neighbors = compute_neighbors(*exp.index, exp.test, *embedder, want, cfg.concurrency);
    if (!npath.empty()) save_neighbors(exp.neighbors, npath);
    return exp;
}

json RunRecord::to_json() const {
    json ns = json::array();
    for (const auto& n : neighbors) ns.push_back({{"id", n.example_id}, {"similarity", n.similarity}, {"rank", n.rank}});
    return {{"sentence_id", sentence_id},
            {"fingerprint", fingerprint},
            {"neighbors", ns},
            {"shots", shots},
            {"request_digest", request_digest},
            {"content_digest", content_digest},
            {"generation", generation},
            {"decoding", decoding_to_json(decoding)},
            {"usage", {{"input_tokens", usage.input_tokens}, {"output_tokens", usage.output_tokens}}},
            {"cost", cost.to_string()},
            {"attempts", attempts},
            {"backend", std::string(ltner::to_string(backend))},
            {"timestamp", timestamp.empty() ? json(nullptr) : json(timestamp)}};
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    r.sentence_id = j.at("sentence_id").get<std::string>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    for (const auto& n : j.at("neighbors"))
        r.neighbors.push_back({n.at("id").get<std::string>(), n.at("similarity").get<double>(),
                               n.at("rank").get<std::size_t>()});
    r.shots = j.at("shots").get<std::size_t>();
    r.request_digest = j.at("request_digest").get<std::string>();
    r.content_digest = j.at("content_digest").get<std::string>();
    r.generation = j.at("generation").get<std::string>();
    r.decoding = decoding_from_json(j.at("decoding"));
    r.usage = {j.at("usage").at("input_tokens").get<std::uint64_t>(),
               j.at("usage").at("output_tokens").get<std::uint64_t>()};
    r.cost = Money::parse(j.at("cost").get<std::string>());
    r.attempts = j.at("attempts").get<int>();
    r.backend = backend_kind_from_string(j.at("backend").get<std::string>());
    if (j.contains("timestamp") && j["timestamp"].is_string()) r.timestamp = j["timestamp"].get<std::string>();
    return r;
}

std::vector<RunRecord> read_records(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read records " + path.string());
    std::vector<RunRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ParseError("records " + path.string() + ": invalid JSON", n);
        try {
            out.push_back(RunRecord::from_json(j));
        } catch (const json::exception& e) {
            throw ParseError("records " + path.string() + ": " + e.what(), n);
        }
    }
    return out;
}

std::shared_ptr<Backend> make_backend(const RunConfig& cfg, const Experiment& exp) {
    const auto kind = backend_kind_from_string(cfg.backend);
    auto live = [&] {
        LiveOptions opts;
        opts.base_url = cfg.base_url;
        opts.retry.max_attempts = cfg.max_attempts;
        opts.requests_per_minute = cfg.requests_per_minute;
        return std::make_shared<LiveBackend>(opts);
    };
    if (kind == BackendKind::Live) return live();
    if (kind == BackendKind::Replay)
        return std::make_shared<ReplayBackend>(cfg.cache_dir, cfg.fall_through ? live() : nullptr);

    if (cfg.mock_responder == "echo-plain") {
        return std::make_shared<MockBackend>(
            [](const CompletionRequest& req, const RequestContext&) { return req.messages.back().content; });
    }
    if (cfg.mock_responder != "echo-gold") throw ArgumentError("unknown mock responder '" + cfg.mock_responder + "'");
    auto gold = std::make_shared<std::unordered_map<std::string, LabeledExample>>();
    for (const auto& q : exp.test) gold->emplace(q.id(), q);
    const auto format = output_format_from_string(cfg.format);
    const TagConfig tag = cfg.tag_config();
    return std::make_shared<MockBackend>([gold, format, tag](const CompletionRequest&, const RequestContext& ctx) {
        auto it = gold->find(ctx.sentence_id);
        if (it == gold->end()) throw BackendError("echo-gold: no gold for sentence '" + ctx.sentence_id + "'", false);
        return render_answer(it->second, format, tag);
    });
}

ScoreReport score_records(const std::vector<RunRecord>& records, const std::vector<LabeledExample>& corpus) {
    std::unordered_map<std::string, const LabeledExample*> by_id;
    for (const auto& ex : corpus) by_id.emplace(ex.id(), &ex);
    std::vector<SentencePrediction> preds;
    std::vector<SentenceGold> gold;
    for (const auto& r : records) {
        auto it = by_id.find(r.sentence_id);
        if (it == by_id.end()) throw ArgumentError("record for unknown sentence " + r.sentence_id);
        preds.push_back({r.sentence_id, r.decoding.spans, r.decoding.unaligned});
        gold.push_back({r.sentence_id, it->second->spans()});
    }
    ScoreReport rep = score(preds, gold);
    for (const auto& r : records) add_diagnostics(rep, r.decoding);
    return rep;
}

RunOutcome run_experiment(const RunConfig& cfg, const Experiment& exp, Backend& backend, const fs::path& out_dir) {
    cfg.validate();
    const PromptPlan plan = cfg.prompt_plan();
    const TagConfig tag = cfg.tag_config();
    const RoleSetting role(cfg.role);
    const std::string fingerprint = cfg.fingerprint();
    const auto& test = exp.test;
    const std::size_t n = test.size();

    std::ofstream records_out;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir / "config.json", dump(cfg.to_json(), 2) + "\n");
        records_out.open(out_dir / "records.jsonl", std::ios::binary | std::ios::trunc);
        if (!records_out) throw ArgumentError("cannot write " + (out_dir / "records.jsonl").string());
    }

    auto process = [&](std::size_t i) {
        const auto& q = test[i];
        RunRecord rec;
        rec.sentence_id = q.id();
        rec.fingerprint = fingerprint;
        std::vector<const LabeledExample*> ranked;
        if (plan.shots > 0) {
            auto it = exp.neighbors.by_sentence.find(q.id());
            if (it == exp.neighbors.by_sentence.end()) throw Error("no neighbors for sentence " + q.id());
            for (const auto& nb : it->second) {
                if (ranked.size() == plan.shots) break;
                const IndexRecord* r = exp.index->find(nb.example_id);
                if (!r) throw Error("neighbor " + nb.example_id + " is not in the index");
                ranked.push_back(&r->example);
                rec.neighbors.push_back(nb);
            }
        }
        CompletionRequest req;
        req.model = cfg.model;
        req.messages = build_messages(plan, exp.schema, role, tag, ranked, q.sentence());
        req.temperature = cfg.temperature;
        req.max_output_tokens = cfg.max_output_tokens;
        rec.shots = ranked.size();
        rec.request_digest = request_digest(req);
        rec.content_digest = content_digest(req.messages);

        CompletionResult res = backend.complete(req, RequestContext{q.id()});
        rec.generation = res.text;
        rec.decoding = plan.format == OutputFormat::Tag ? decode_tagged(res.text, q.tokens(), tag, exp.schema)
                                                        : decode_json_answer(res.text, q.tokens(), exp.schema);
        rec.usage = res.usage;
        rec.cost = cost_of(res.usage, cfg.model, cfg.prices);
        rec.attempts = res.attempts;
        rec.backend = res.backend;
        rec.timestamp = res.recorded_at;
        return rec;
    };

    // Completed slots are committed strictly in sentence order. A record is
    // kept only while the cost of the records before it is under the cap.
    struct Slot {
        bool done = false;
        std::optional<RunRecord> record;
        std::string error;
    };
    std::vector<Slot> slots(n);
    std::mutex mu;
    std::size_t committed = 0;
    Money spent;
    bool halted = false;
    std::string halt_reason;
    std::atomic<bool> stop{false};
    std::atomic<std::size_t> next{0};
    RunOutcome outcome;
    outcome.fingerprint = fingerprint;

    auto flush = [&] {
        while (!halted && committed < n && slots[committed].done) {
            if (cfg.cost_cap && spent >= *cfg.cost_cap) {
                halted = true;
                halt_reason = "cost cap " + cfg.cost_cap->to_string() + " reached";
                break;
            }
            Slot& s = slots[committed];
            if (!s.record) {
                halted = true;
                halt_reason = "sentence " + test[committed].id() + ": " + s.error;
                break;
            }
            if (records_out.is_open()) {
                records_out << dump(s.record->to_json()) << '\n';
                records_out.flush();
            }
            spent += s.record->cost;
            outcome.records.push_back(std::move(*s.record));
            s.record.reset();
            ++committed;
        }
        if (!halted && cfg.cost_cap && spent >= *cfg.cost_cap && committed < n) {
            halted = true;
            halt_reason = "cost cap " + cfg.cost_cap->to_string() + " reached";
        }
        if (halted) stop = true;
    };

    auto worker = [&] {
        while (!stop) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            Slot local;
            try {
                local.record = process(i);
            } catch (const std::exception& e) {
                local.error = e.what();
            }
            local.done = true;
            std::lock_guard lock(mu);
            slots[i] = std::move(local);
            if (slots[i].error.size()) stop = true;
            flush();
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t t = 1; t < std::max<std::size_t>(cfg.concurrency, 1); ++t) pool.emplace_back(worker);
        worker();
    }
    {
        std::lock_guard lock(mu);
        flush();
    }
    for (std::size_t i = committed; i < n; ++i) {
        if (slots[i].done && slots[i].record) ++outcome.discarded;
    }
    outcome.partial = committed < n;
    outcome.halt_reason = halt_reason;
    outcome.total_cost = spent;
    std::vector<LabeledExample> scored(test.begin(), test.begin() + static_cast<std::ptrdiff_t>(committed));
    outcome.report = score_records(outcome.records, scored);

    if (!out_dir.empty()) {
        records_out.close();
        json rep = {{"fingerprint", fingerprint},
                    {"partial", outcome.partial},
                    {"halt_reason", outcome.halt_reason},
                    {"sentences_planned", n},
                    {"sentences_done", committed},
                    {"discarded", outcome.discarded},
                    {"total_cost", spent.to_string()},
                    {"score", report_to_json(outcome.report)}};
        write_text(out_dir / "report.json", dump(rep, 2) + "\n");
        std::string text = report_to_text(outcome.report);
        text += "total cost: " + spent.to_string() + "\n";
        if (outcome.partial) text += "PARTIAL: " + halt_reason + "\n";
        write_text(out_dir / "report.txt", text);
    }
    return outcome;
}

namespace {

GridRow run_variant(const RunConfig& cfg, const Experiment& exp, const std::string& name) {
    GridRow row;
    row.variant = name;
    try {
        auto backend = make_backend(cfg, exp);
        row.outcome = run_experiment(cfg, exp, *backend, cfg.output_dir);
        if (row.outcome->partial) row.error = "partial: " + row.outcome->halt_reason;
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

void write_grid(const GridResult& g, const fs::path& dir, const std::string& header) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    write_text(dir / "grid.csv", grid_to_csv(g));
    write_text(dir / "grid.txt", grid_to_text(g, header));
    json rows = json::array();
    for (const auto& r : g.rows) {
        json j = {{"variant", r.variant}, {"error", r.error}};
        if (r.outcome) {
            j["score"] = report_to_json(r.outcome->report);
            j["total_cost"] = r.outcome->total_cost.to_string();
            j["partial"] = r.outcome->partial;
        }
        rows.push_back(std::move(j));
    }
    write_text(dir / "grid.json", dump({{"rows", rows}, {"content_identical", g.content_identical}}, 2) + "\n");
}

fs::path neighbors_file(const RunConfig& base) {
    if (!base.neighbors_cache.empty()) return base.neighbors_cache;
    if (base.output_dir.empty()) return {};
    return fs::path(base.output_dir) / "neighbors.jsonl";
}

}  // namespace

GridResult ablate_tags(const RunConfig& base, const std::vector<TagConfig>& presets) {
    const Experiment exp = prepare_experiment(base, base.shots, neighbors_file(base));
    GridResult g;
    for (std::size_t i = 0; i < presets.size(); ++i) {
        RunConfig cfg = base;
        cfg.tag = presets[i].name;
        std::ostringstream dir;
        dir << "tag-" << std::setw(2) << std::setfill('0') << i + 1;
        cfg.output_dir = base.output_dir.empty() ? "" : (fs::path(base.output_dir) / dir.str()).string();
        g.rows.push_back(run_variant(cfg, exp, presets[i].name));
    }
    write_grid(g, base.output_dir, "tag");
    return g;
}

GridResult ablate_roles(const RunConfig& base, const std::vector<std::string>& roles) {
    const Experiment exp = prepare_experiment(base, base.shots, neighbors_file(base));
    GridResult g;
    for (const auto& code : roles) {
        RunConfig cfg = base;
        cfg.role = code;
        cfg.output_dir = base.output_dir.empty() ? "" : (fs::path(base.output_dir) / ("role-" + code)).string();
        g.rows.push_back(run_variant(cfg, exp, code));
    }
    // Role settings may only move messages between roles.
    std::unordered_map<std::string, std::string> first;
    for (const auto& row : g.rows) {
        if (!row.outcome) continue;
        for (const auto& rec : row.outcome->records) {
            auto [it, fresh] = first.emplace(rec.sentence_id, rec.content_digest);
            if (!fresh && it->second != rec.content_digest) g.content_identical = false;
        }
    }
    write_grid(g, base.output_dir, "role");
    return g;
}

SweepDimension sweep_dimension_from_string(std::string_view s) {
    if (s == "shots") return SweepDimension::Shots;
    if (s == "budget") return SweepDimension::Budget;
    if (s == "cost_cap" || s == "cost-cap") return SweepDimension::CostCap;
    throw ArgumentError("unknown sweep dimension '" + std::string(s) + "' (shots|budget|cost_cap)");
}

std::vector<std::string> default_sweep_values(SweepDimension dim) {
    switch (dim) {
        case SweepDimension::Shots: return {"0", "1", "5", "10", "20", "30", "50", "70", "100", "150", "200"};
        case SweepDimension::Budget: return {"30", "100", "500", "1000", "5000", "full"};
        case SweepDimension::CostCap: return {"0.01", "0.1", "1", "10"};
    }
    return {};
}

std::vector<SweepPoint> sweep(const RunConfig& base, SweepDimension dim, const std::vector<std::string>& values) {
    if (values.empty()) throw ArgumentError("sweep needs at least one value");
    // Parsed numeric keys, "full" sorting last; ascending order is required.
    std::vector<std::pair<bool, std::int64_t>> keys;
    for (const auto& v : values) {
        if (v == "full") {
            if (dim != SweepDimension::Budget) throw ArgumentError("'full' is only valid for budget sweeps");
            keys.push_back({true, 0});
            continue;
        }
        try {
            keys.push_back({false, dim == SweepDimension::CostCap ? Money::parse(v).pico()
                                                                  : static_cast<std::int64_t>(std::stoull(v))});
        } catch (const ArgumentError&) {
            throw;
        } catch (const std::exception&) {
            throw ArgumentError("bad sweep value '" + v + "'");
        }
    }
    for (std::size_t i = 1; i < keys.size(); ++i) {
        if (!(keys[i - 1] < keys[i])) throw ArgumentError("sweep values must be strictly ascending");
    }

    const fs::path root = base.output_dir;
    auto point_dir = [&](const std::string& v) {
        return root.empty() ? std::string() : (root / ("point-" + v)).string();
    };
    std::vector<SweepPoint> points;
    std::optional<Experiment> shared;
    if (dim != SweepDimension::Budget) {
        std::size_t k = base.shots;
        if (dim == SweepDimension::Shots) k = static_cast<std::size_t>(keys.back().second);
        shared = prepare_experiment(base, k, neighbors_file(base));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        SweepPoint p;
        p.value = values[i];
        try {
            RunConfig cfg = base;
            cfg.output_dir = point_dir(values[i]);
            switch (dim) {
                case SweepDimension::Shots: cfg.shots = static_cast<std::size_t>(keys[i].second); break;
                case SweepDimension::CostCap: cfg.cost_cap = Money::from_pico(keys[i].second); break;
                case SweepDimension::Budget:
                    if (keys[i].first) cfg.pool_budget.reset();
                    else cfg.pool_budget = static_cast<std::size_t>(keys[i].second);
                    break;
            }
            std::optional<Experiment> own;
            if (!shared) {
                const fs::path np = cfg.output_dir.empty() ? fs::path() : fs::path(cfg.output_dir) / "neighbors.jsonl";
                RunConfig prep = cfg;
                prep.neighbors_cache.clear();
                own = prepare_experiment(prep, cfg.shots, np);
            }
            const Experiment& exp = shared ? *shared : *own;
            auto backend = make_backend(cfg, exp);
            p.outcome = run_experiment(cfg, exp, *backend, cfg.output_dir);
            if (p.outcome->partial && dim != SweepDimension::CostCap) p.error = "partial: " + p.outcome->halt_reason;
        } catch (const std::exception& e) {
            p.error = e.what();
        }
        points.push_back(std::move(p));
    }
    if (!root.empty()) {
        fs::create_directories(root);
        write_text(root / "sweep.csv", sweep_to_csv(points));
    }
    return points;
}

std::string grid_to_csv(const GridResult& g) {
    std::ostringstream os;
    os << "variant,P,R,F1,total_cost,sentences,status\n";
    for (const auto& r : g.rows) {
        std::string name = r.variant;
        if (name.find_first_of(",\"") != std::string::npos) {
            std::string q = "\"";
            for (char c : name) q += c == '"' ? std::string("\"\"") : std::string(1, c);
            name = q + "\"";
        }
        os << name << ',';
        if (r.outcome) {
            os << std::setprecision(17) << r.outcome->report.precision << ',' << r.outcome->report.recall << ','
               << r.outcome->report.f1 << ',' << r.outcome->total_cost.to_string() << ','
               << r.outcome->report.n_sentences << ',';
        } else {
            os << ",,,,,";
        }
        os << (r.error.empty() ? "ok" : "failed") << '\n';
    }
    return os.str();
}

std::string grid_to_text(const GridResult& g, const std::string& header) {
    std::size_t width = header.size();
    for (const auto& r : g.rows) width = std::max(width, r.variant.size());
    width += 2;
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << header << std::right << std::setw(9) << "P(%)"
       << std::setw(9) << "R(%)" << std::setw(9) << "F1(%)" << std::setw(14) << "cost" << "  status\n";
    for (const auto& r : g.rows) {
        os << std::left << std::setw(static_cast<int>(width)) << r.variant << std::right;
        if (r.outcome) {
            os << std::setw(9) << fmt_pct(r.outcome->report.precision) << std::setw(9)
               << fmt_pct(r.outcome->report.recall) << std::setw(9) << fmt_pct(r.outcome->report.f1) << std::setw(14)
               << r.outcome->total_cost.to_string();
        } else {
            os << std::setw(9) << "-" << std::setw(9) << "-" << std::setw(9) << "-" << std::setw(14) << "-";
        }
        os << "  " << (r.error.empty() ? "ok" : r.error) << '\n';
    }
    if (!g.content_identical) os << "WARNING: message contents differ between variants\n";
    return os.str();
}

std::string sweep_to_csv(const std::vector<SweepPoint>& points) {
    std::ostringstream os;
    os << "value,P,R,F1,total_cost\n";
    for (const auto& p : points) {
        os << p.value << ',';
        if (p.outcome) {
            os << std::setprecision(17) << p.outcome->report.precision << ',' << p.outcome->report.recall << ','
               << p.outcome->report.f1 << ',' << p.outcome->total_cost.to_string();
        } else {
            os << ",,,";
        }
        os << '\n';
    }
    return os.str();
}

std::vector<AggregateRow> aggregate_runs(const std::vector<fs::path>& run_dirs, const std::string& group_by) {
    std::map<std::string, std::vector<LabeledExample>> corpora;
    std::vector<AggregateItem> items;
    for (const auto& dir : run_dirs) {
        std::ifstream in(dir / "config.json");
        if (!in) throw LoadError("run directory " + dir.string() + " has no config.json");
        const json cfg = json::parse(in, nullptr, false);
        if (cfg.is_discarded()) throw LoadError(dir.string() + "/config.json is not valid JSON");
        if (!cfg.contains(group_by)) throw ArgumentError("config has no key '" + group_by + "'");
        const json& gv = cfg[group_by];
        const std::string group = gv.is_string() ? gv.get<std::string>() : gv.dump();
        const std::string corpus_path = cfg.value("corpus", "");
        auto [cit, fresh] = corpora.try_emplace(corpus_path);
        if (fresh) cit->second = read_corpus(corpus_path);
        std::unordered_map<std::string, const LabeledExample*> by_id;
        for (const auto& ex : cit->second) by_id.emplace(ex.id(), &ex);
        for (auto& rec : read_records(dir / "records.jsonl")) {
            auto it = by_id.find(rec.sentence_id);
            if (it == by_id.end()) throw ArgumentError("record for unknown sentence " + rec.sentence_id);
            AggregateItem item;
            item.group = group;
            // Prefix by run so repeated sentences across runs stay distinct.
            const std::string id = dir.string() + "#" + rec.sentence_id;
            item.prediction = {id, rec.decoding.spans, rec.decoding.unaligned};
            item.gold = {id, it->second->spans()};
            item.cost = rec.cost;
            item.shots = rec.shots;
            for (const auto& d : rec.decoding.diagnostics) ++item.diagnostics[std::string(to_string(d.kind))];
            items.push_back(std::move(item));
        }
    }
    return aggregate(items);
}

}  // namespace ltner
