#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "kgd/adapt.hpp"
#include "kgd/embedding_io.hpp"
#include "kgd/error.hpp"
#include "kgd/lexicon.hpp"
#include "kgd/lkg.hpp"
#include "kgd/synth.hpp"
#include "kgd/vkg.hpp"

namespace kgd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Keys of the run config that are not adaptation settings.
struct RunPaths {
    std::optional<std::string> lexicon;
    std::optional<std::string> embeddings;
    std::optional<std::string> proposals;
    std::optional<std::string> dataset;
    std::optional<std::string> output_dir;
};

struct RunConfig {
    AdaptationConfig adaptation;
    bool adaptation_seed_set = false;
    RunPaths paths;
    json synthetic = json::object();
};

RunConfig load_run_config(const std::string& path, const AdaptationConfig& defaults) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, path + ": config must be an object");
    RunConfig rc;
    json adaptation = json::object();
    for (const auto& [key, v] : j.items()) {
        auto str = [&]() {
            if (!v.is_string()) throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be a string");
            return v.get<std::string>();
        };
        if (key == "lexicon") rc.paths.lexicon = str();
        else if (key == "embeddings") rc.paths.embeddings = str();
        else if (key == "proposals") rc.paths.proposals = str();
        else if (key == "dataset") rc.paths.dataset = str();
        else if (key == "output_dir") rc.paths.output_dir = str();
        else if (key == "synthetic") rc.synthetic = v;
        else adaptation[key] = v;
    }
    rc.adaptation = config_from_json(adaptation, defaults);
    rc.adaptation_seed_set = adaptation.contains("seed");
    return rc;
}

void require_file(const std::string& path, const char* what) {
    if (!fs::exists(path)) throw Error(ErrorCode::IoError, std::string(what) + " '" + path + "' does not exist");
}

template <typename T>
T pick(const std::optional<T>& flag, const std::optional<T>& config, const T& fallback) {
    if (flag) return *flag;
    if (config) return *config;
    return fallback;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Knowledge-graph distillation engine for adapting a classifier to unlabeled target data", "kgd"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::string log_level = "warn";
    app.add_option("--config", config_path, "JSON run config; command-line flags override it");
    app.add_option("--seed", seed, "Random seed");
    app.add_option("--output-dir", output_dir, "Directory for every output file");
    app.add_option("--log-level", log_level, "error|warn|info|debug")
        ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

    // lkg-extract
    auto* lkg_cmd = app.add_subcommand("lkg-extract", "Build a language knowledge graph checkpoint from a lexicon");
    std::optional<std::string> lexicon, embeddings, proposals, dataset;
    std::string mode = "hierarchy";
    std::string hyponym_text = "definition";
    std::size_t stub_dim = 64;
    std::optional<std::size_t> hidden_dim;
    lkg_cmd->add_option("--lexicon", lexicon, "Lexicon JSON file");
    lkg_cmd->add_option("--mode", mode, "names|definitions|hierarchy")
        ->check(CLI::IsMember({"names", "definitions", "hierarchy"}));
    lkg_cmd->add_option("--hyponym-text", hyponym_text, "definition|name")
        ->check(CLI::IsMember({"definition", "name"}));
    lkg_cmd->add_option("--embeddings", embeddings, "Prompt embeddings (one row per expanded prompt); stub encoder if absent");
    lkg_cmd->add_option("--dim", stub_dim, "Stub encoder dimension")->check(CLI::Range(2, 1 << 20));
    lkg_cmd->add_option("--hidden-dim", hidden_dim, "GCN hidden width");

    // vkg-init
    auto* vkg_cmd = app.add_subcommand("vkg-init", "Initialize a vision knowledge graph from category embeddings");
    std::optional<double> lambda, alpha;
    std::optional<std::string> vkg_mode;
    vkg_cmd->add_option("--lexicon", lexicon, "Lexicon JSON file");
    vkg_cmd->add_option("--embeddings", embeddings, "Category-name embeddings (one row per category); stub if absent");
    vkg_cmd->add_option("--dim", stub_dim, "Stub encoder dimension")->check(CLI::Range(2, 1 << 20));
    vkg_cmd->add_option("--lambda", lambda, "EMA weight");
    vkg_cmd->add_option("--alpha", alpha, "Smoothing scale");
    vkg_cmd->add_option("--vkg-mode", vkg_mode, "static|dynamic-no-smooth|dynamic")
        ->check(CLI::IsMember({"static", "dynamic-no-smooth", "dynamic"}));

    // calibrate
    auto* cal_cmd = app.add_subcommand("calibrate", "Write calibrated pseudo labels for a proposal file");
    std::optional<std::string> lkg_path, vkg_path, fusion;
    std::optional<double> tau, temperature;
    cal_cmd->add_option("--proposals", proposals, "Proposal JSONL file");
    cal_cmd->add_option("--lkg", lkg_path, "LKG checkpoint header (lkg.json)");
    cal_cmd->add_option("--vkg", vkg_path, "VKG checkpoint header (vkg.json)");
    cal_cmd->add_option("--fusion", fusion, "mt|lkg|vkg|kgd")->check(CLI::IsMember({"mt", "lkg", "vkg", "kgd"}));
    cal_cmd->add_option("--tau", tau, "Confidence threshold");
    cal_cmd->add_option("--temperature", temperature, "VKG cosine softmax temperature");

    // adapt
    auto* adapt_cmd = app.add_subcommand("adapt", "Run the adaptation loop and write a report");
    std::optional<std::string> synthetic, lkg_mode;
    std::optional<std::size_t> iterations;
    std::optional<double> ema_rate, lr;
    adapt_cmd->add_option("--dataset", dataset, "Dataset manifest (dataset.json)");
    adapt_cmd->add_option("--synthetic", synthetic, "Generate the named synthetic benchmark first")
        ->check(CLI::IsMember({"default"}));
    adapt_cmd->add_option("--fusion", fusion, "mt|lkg|vkg|kgd")->check(CLI::IsMember({"mt", "lkg", "vkg", "kgd"}));
    adapt_cmd->add_option("--iterations", iterations, "Adaptation iterations");
    adapt_cmd->add_option("--lkg-mode", lkg_mode, "names|definitions|hierarchy")
        ->check(CLI::IsMember({"names", "definitions", "hierarchy"}));
    adapt_cmd->add_option("--vkg-mode", vkg_mode, "static|dynamic-no-smooth|dynamic")
        ->check(CLI::IsMember({"static", "dynamic-no-smooth", "dynamic"}));
    adapt_cmd->add_option("--tau", tau, "Confidence threshold");
    adapt_cmd->add_option("--ema-rate", ema_rate, "Teacher EMA rate");
    adapt_cmd->add_option("--lr", lr, "Student learning rate");

    // synth
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic fixture set");
    std::optional<std::size_t> n_categories, dim, n_images, per_image;
    std::optional<double> shift;
    synth_cmd->add_option("--n-categories", n_categories, "Number of categories");
    synth_cmd->add_option("--dim", dim, "Feature dimension");
    synth_cmd->add_option("--shift", shift, "Domain shift magnitude");
    synth_cmd->add_option("--n-images", n_images, "Target images");
    synth_cmd->add_option("--proposals-per-image", per_image, "Proposals per image");

    // validate
    auto* val_cmd = app.add_subcommand("validate", "Check fixture files against every format invariant");
    std::vector<std::string> embedding_files;
    val_cmd->add_option("--lexicon", lexicon, "Lexicon JSON file");
    val_cmd->add_option("--embeddings", embedding_files, "Embedding files (repeatable)");
    val_cmd->add_option("--proposals", proposals, "Proposal JSONL file");
    val_cmd->add_option("--dataset", dataset, "Dataset manifest");

    std::vector<std::string> argv_storage;
    argv_storage.push_back("kgd");
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_storage) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    auto logger = spdlog::get("kgd");
    if (!logger) logger = spdlog::stderr_color_mt("kgd");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        const bool is_adapt = adapt_cmd->parsed();
        const AdaptationConfig defaults = is_adapt && synthetic ? synthetic_benchmark_config() : AdaptationConfig{};
        RunConfig rc;
        if (config_path) rc = load_run_config(*config_path, defaults);
        else rc.adaptation = defaults;
        AdaptationConfig& cfg = rc.adaptation;
        if (seed) cfg.seed = *seed;

        const fs::path out_dir = pick(output_dir, rc.paths.output_dir, std::string("kgd_out"));
        auto ensure_out = [&]() { fs::create_directories(out_dir); };

        if (lkg_cmd->parsed()) {
            const std::string lex = pick(lexicon, rc.paths.lexicon, std::string());
            if (lex.empty()) throw Error(ErrorCode::InvalidConfig, "--lexicon is required");
            require_file(lex, "lexicon");
            const auto entries = parse_lexicon(lex);
            const PromptSet prompts =
                expand_prompts(entries, parse_prompt_mode(mode), parse_hyponym_text(hyponym_text));
            const auto emb = pick(embeddings, rc.paths.embeddings, std::string());
            const LkgOptions options{hidden_dim.value_or(cfg.hidden_dim), cfg.seed};
            LanguageKnowledgeGraph g =
                emb.empty() ? lkg_extract(prompts, StubEncoder(stub_dim, cfg.seed), options)
                            : lkg_extract(prompts, FileEmbeddingProvider::from_file(emb), options);
            ensure_out();
            const auto path = save_lkg(out_dir, g);
            out << "wrote " << path.string() << " (" << g.num_nodes() << " nodes, " << g.num_categories()
                << " categories)\n";
            return 0;
        }

        if (vkg_cmd->parsed()) {
            const std::string lex = pick(lexicon, rc.paths.lexicon, std::string());
            if (lex.empty()) throw Error(ErrorCode::InvalidConfig, "--lexicon is required");
            require_file(lex, "lexicon");
            const auto entries = parse_lexicon(lex);
            std::vector<std::string> names;
            for (const auto& e : entries) names.push_back(e.category);
            const auto emb = pick(embeddings, rc.paths.embeddings, std::string());
            const Matrix init = emb.empty() ? StubEncoder(stub_dim, cfg.seed).encode(names)
                                            : FileEmbeddingProvider::from_file(emb).encode(names);
            VkgOptions options{lambda.value_or(cfg.lambda), alpha.value_or(cfg.alpha),
                               vkg_mode ? parse_vkg_mode(*vkg_mode) : cfg.vkg_mode, cfg.raw_smoothing};
            const auto g = vkg_init(init, options);
            ensure_out();
            const auto path = save_vkg(out_dir, g);
            out << "wrote " << path.string() << " (" << g.num_categories() << " nodes)\n";
            return 0;
        }

        if (cal_cmd->parsed()) {
            const std::string prop = pick(proposals, rc.paths.proposals, std::string());
            if (prop.empty()) throw Error(ErrorCode::InvalidConfig, "--proposals is required");
            require_file(prop, "proposals");
            const Fusion f = fusion ? parse_fusion(*fusion) : cfg.fusion;
            std::optional<LanguageKnowledgeGraph> lkg;
            std::optional<VisionKnowledgeGraph> vkg;
            if (uses_lkg(f)) {
                if (!lkg_path) throw Error(ErrorCode::InvalidConfig, "--lkg is required for fusion " + std::string(to_string(f)));
                lkg = load_lkg(*lkg_path);
            }
            if (uses_vkg(f)) {
                if (!vkg_path) throw Error(ErrorCode::InvalidConfig, "--vkg is required for fusion " + std::string(to_string(f)));
                vkg = load_vkg(*vkg_path);
            }
            const double t = tau.value_or(cfg.tau);
            const auto batches = read_proposals(prop);
            std::map<std::string, Matrix> files;
            std::string lines;
            Diagnostics diag;
            for (const auto& b : batches) {
                auto it = files.find(b.features_file);
                if (it == files.end()) {
                    it = files.emplace(b.features_file, load_embeddings(fs::path(prop).parent_path() / b.features_file)).first;
                }
                Matrix feats = b.feature_rows.empty() ? Matrix(0, it->second.cols()) : gather_rows(it->second, b.feature_rows);
                if (cfg.normalize_features) normalize_rows(feats);
                const auto labels = calibrate_labels(feats, b.probs, t, f, lkg ? &*lkg : nullptr, vkg ? &*vkg : nullptr,
                                                     temperature.value_or(cfg.vkg_temperature), &diag);
                json rows = json::array();
                std::size_t k = 0;
                for (std::size_t j = 0; j < b.size(); ++j) {
                    const Box crop = square_crop(b.boxes[j], b.image_size);
                    json row = {{"box", {b.boxes[j].x1, b.boxes[j].y1, b.boxes[j].x2, b.boxes[j].y2}},
                                {"crop", {crop.x1, crop.y1, crop.x2, crop.y2}}};
                    const bool kept = k < labels.kept.size() && labels.kept[k] == j;
                    row["kept"] = kept;
                    if (kept) {
                        auto vec = [](const Matrix& m, std::size_t r) {
                            return std::vector<double>(m.row(r).begin(), m.row(r).end());
                        };
                        row["p_hat"] = vec(labels.p_hat, k);
                        if (!labels.p_l.empty()) row["p_l"] = vec(labels.p_l, k);
                        if (!labels.p_v.empty()) row["p_v"] = vec(labels.p_v, k);
                        row["p_tilde"] = vec(labels.fused, k);
                        ++k;
                    }
                    rows.push_back(std::move(row));
                }
                lines += json({{"image_id", b.image_id}, {"proposals", std::move(rows)}}).dump() + "\n";
            }
            ensure_out();
            write_text(out_dir / "calibrated.jsonl", lines);
            out << "wrote " << (out_dir / "calibrated.jsonl").string() << " (" << batches.size() << " images)\n";
            return 0;
        }

        if (is_adapt) {
            if (fusion) cfg.fusion = parse_fusion(*fusion);
            if (iterations) cfg.iterations = *iterations;
            if (lkg_mode) cfg.lkg_mode = parse_prompt_mode(*lkg_mode);
            if (vkg_mode) cfg.vkg_mode = parse_vkg_mode(*vkg_mode);
            if (tau) cfg.tau = *tau;
            if (ema_rate) cfg.ema_rate = *ema_rate;
            if (lr) cfg.lr = *lr;
            cfg.validate();

            Dataset data;
            ensure_out();
            if (synthetic) {
                SynthSpec spec = synth_spec_from_json(rc.synthetic);
                if (seed) spec.seed = *seed;
                const auto manifest = synth_generate(spec, out_dir / "data");
                data = load_dataset(manifest);
                data.description = "synthetic:" + *synthetic + ":seed=" + std::to_string(spec.seed);
            } else {
                const std::string ds = pick(dataset, rc.paths.dataset, std::string());
                if (ds.empty()) throw Error(ErrorCode::InvalidConfig, "adapt needs --dataset or --synthetic");
                require_file(ds, "dataset manifest");
                data = load_dataset(ds);
            }
            const auto report = run_adaptation(cfg, data, out_dir);
            out << "wrote " << (out_dir / "report.json").string();
            if (report.teacher_accuracy) out << " (teacher probe accuracy " << *report.teacher_accuracy << ")";
            out << "\n";
            return 0;
        }

        if (synth_cmd->parsed()) {
            SynthSpec spec = synth_spec_from_json(rc.synthetic);
            if (n_categories) spec.n_categories = *n_categories;
            if (dim) spec.dim = *dim;
            if (shift) spec.shift = *shift;
            if (n_images) spec.n_images = *n_images;
            if (per_image) spec.proposals_per_image = *per_image;
            if (seed) spec.seed = *seed;
            const auto manifest = synth_generate(spec, out_dir);
            out << "wrote " << manifest.string() << "\n";
            return 0;
        }

        if (val_cmd->parsed()) {
            std::optional<std::size_t> n_c;
            const std::string lex = pick(lexicon, rc.paths.lexicon, std::string());
            if (!lex.empty()) {
                require_file(lex, "lexicon");
                const auto entries = parse_lexicon(lex);
                if (entries.size() < 2) {
                    throw Error(ErrorCode::TooFewCategories, "lexicon has " + std::to_string(entries.size()) + " categories");
                }
                n_c = entries.size();
            }
            if (rc.paths.embeddings && embedding_files.empty()) embedding_files.push_back(*rc.paths.embeddings);
            for (const auto& e : embedding_files) {
                require_file(e, "embedding file");
                load_embeddings(e);
            }
            const std::string prop = pick(proposals, rc.paths.proposals, std::string());
            if (!prop.empty()) {
                require_file(prop, "proposals");
                std::map<std::string, std::size_t> file_rows;
                for (const auto& b : read_proposals(prop)) {
                    if (n_c && b.probs.rows() > 0 && b.probs.cols() != *n_c) {
                        throw Error(ErrorCode::DimMismatch, "image '" + b.image_id + "' has " +
                                                                std::to_string(b.probs.cols()) + " probabilities, lexicon has " +
                                                                std::to_string(*n_c) + " categories");
                    }
                    auto it = file_rows.find(b.features_file);
                    if (it == file_rows.end()) {
                        const auto path = fs::path(prop).parent_path() / b.features_file;
                        it = file_rows.emplace(b.features_file, load_embeddings(path).rows()).first;
                    }
                    for (auto r : b.feature_rows) {
                        if (r >= it->second) {
                            throw Error(ErrorCode::RowCountMismatch, "image '" + b.image_id + "' references feature row " +
                                                                         std::to_string(r) + " of " + std::to_string(it->second));
                        }
                    }
                }
            }
            const std::string ds = pick(dataset, rc.paths.dataset, std::string());
            if (!ds.empty()) {
                require_file(ds, "dataset manifest");
                const Dataset d = load_dataset(ds);
                if (d.num_categories() < 2) throw Error(ErrorCode::TooFewCategories, "dataset has fewer than 2 categories");
            }
            out << "OK\n";
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return is_input_error(e.code()) ? 2 : 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace kgd::cli
