#include "kgd/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "kgd/linalg.hpp"
#include "kgd/random.hpp"

namespace kgd {

using nlohmann::json;

namespace {

[[noreturn]] void bad_config(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

std::string_view to_string(Fusion f) {
    switch (f) {
        case Fusion::Kgd: return "kgd";
        case Fusion::MtOnly: return "mt";
        case Fusion::LkgOnly: return "lkg";
        case Fusion::VkgOnly: return "vkg";
    }
    return "kgd";
}

Fusion parse_fusion(std::string_view text) {
    if (text == "kgd") return Fusion::Kgd;
    if (text == "mt") return Fusion::MtOnly;
    if (text == "lkg") return Fusion::LkgOnly;
    if (text == "vkg") return Fusion::VkgOnly;
    bad_config("unknown fusion '" + std::string(text) + "'");
}

bool uses_lkg(Fusion f) { return f == Fusion::Kgd || f == Fusion::LkgOnly; }
bool uses_vkg(Fusion f) { return f == Fusion::Kgd || f == Fusion::VkgOnly; }

void AdaptationConfig::validate() const {
    if (!(tau >= 0.0 && tau < 1.0)) bad_config("tau must lie in [0,1)");
    if (!(ema_rate > 0.0 && ema_rate < 1.0)) bad_config("ema_rate must lie in (0,1)");
    if (!(lambda > 0.0 && lambda < 1.0)) bad_config("lambda must lie in (0,1)");
    if (!(alpha > 0.0 && alpha < 1.0)) bad_config("alpha must lie in (0,1)");
    if (!(vkg_temperature > 0.0)) bad_config("vkg_temperature must be positive");
    if (batch_size == 0) bad_config("batch_size must be positive");
    if (!(lr > 0.0) || !(gcn_lr > 0.0) || !(init_lr > 0.0)) bad_config("learning rates must be positive");
    if (!(weight_decay >= 0.0)) bad_config("weight_decay must be nonnegative");
    if (hidden_dim == 0) bad_config("hidden_dim must be positive");
}

json to_json(const AdaptationConfig& c) {
    return {{"tau", c.tau},
            {"ema_rate", c.ema_rate},
            {"lambda", c.lambda},
            {"alpha", c.alpha},
            {"lkg_mode", to_string(c.lkg_mode)},
            {"hyponym_text", to_string(c.hyponym_text)},
            {"vkg_mode", to_string(c.vkg_mode)},
            {"raw_smoothing", c.raw_smoothing},
            {"vkg_temperature", c.vkg_temperature},
            {"fusion", to_string(c.fusion)},
            {"iterations", c.iterations},
            {"batch_size", c.batch_size},
            {"lr", c.lr},
            {"weight_decay", c.weight_decay},
            {"cosine_schedule", c.cosine_schedule},
            {"gcn_optimizer", to_string(c.gcn_optimizer)},
            {"gcn_lr", c.gcn_lr},
            {"hidden_dim", c.hidden_dim},
            {"init_epochs", c.init_epochs},
            {"init_lr", c.init_lr},
            {"normalize_features", c.normalize_features},
            {"seed", c.seed}};
}

AdaptationConfig config_from_json(const json& j, AdaptationConfig c) {
    if (!j.is_object()) bad_config("config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "tau") c.tau = v.get<double>();
            else if (key == "ema_rate") c.ema_rate = v.get<double>();
            else if (key == "lambda") c.lambda = v.get<double>();
            else if (key == "alpha") c.alpha = v.get<double>();
            else if (key == "lkg_mode") c.lkg_mode = parse_prompt_mode(v.get<std::string>());
            else if (key == "hyponym_text") c.hyponym_text = parse_hyponym_text(v.get<std::string>());
            else if (key == "vkg_mode") c.vkg_mode = parse_vkg_mode(v.get<std::string>());
            else if (key == "raw_smoothing") c.raw_smoothing = v.get<bool>();
            else if (key == "vkg_temperature") c.vkg_temperature = v.get<double>();
            else if (key == "fusion") c.fusion = parse_fusion(v.get<std::string>());
            else if (key == "iterations") c.iterations = v.get<std::size_t>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "lr") c.lr = v.get<double>();
            else if (key == "weight_decay") c.weight_decay = v.get<double>();
            else if (key == "cosine_schedule") c.cosine_schedule = v.get<bool>();
            else if (key == "gcn_optimizer") c.gcn_optimizer = parse_optimizer_kind(v.get<std::string>());
            else if (key == "gcn_lr") c.gcn_lr = v.get<double>();
            else if (key == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
            else if (key == "init_epochs") c.init_epochs = v.get<std::size_t>();
            else if (key == "init_lr") c.init_lr = v.get<double>();
            else if (key == "normalize_features") c.normalize_features = v.get<bool>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else bad_config("unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        bad_config(std::string("config value has the wrong type: ") + e.what());
    }
    return c;
}

AdaptationConfig synthetic_benchmark_config() {
    AdaptationConfig c;
    c.iterations = 500;
    c.ema_rate = 0.99;
    c.lr = 0.01;
    c.seed = 42;
    return c;
}

// ---------------------------------------------------------------------------
// Classifier head
// ---------------------------------------------------------------------------

ClassifierHead ClassifierHead::zeros(std::size_t dim, std::size_t num_categories) {
    return {Matrix(dim, num_categories), Matrix(1, num_categories)};
}

Matrix head_logits(const ClassifierHead& head, const Matrix& features) {
    Matrix z = matmul(features, head.weights);
    for (std::size_t j = 0; j < z.rows(); ++j) {
        auto r = z.row(j);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] += head.bias(0, i);
    }
    return z;
}

Matrix head_probs(const ClassifierHead& head, const Matrix& features) {
    if (features.rows() == 0) return Matrix(0, head.weights.cols());
    return row_softmax(head_logits(head, features));
}

void save_head(const std::filesystem::path& path, const ClassifierHead& head) {
    save_embeddings(path, vstack(head.weights, head.bias));
}

ClassifierHead load_head(const std::filesystem::path& path) {
    const Matrix m = load_embeddings(path);
    if (m.rows() < 2) throw Error(ErrorCode::FormatError, "head checkpoint needs at least 2 rows");
    return {slice_rows(m, 0, m.rows() - 1), slice_rows(m, m.rows() - 1, m.rows())};
}

// ---------------------------------------------------------------------------
// Pseudo labels
// ---------------------------------------------------------------------------

std::vector<std::size_t> kept_indices(const Matrix& p_hat, double tau) {
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < p_hat.rows(); ++j) {
        auto r = p_hat.row(j);
        if (!r.empty() && *std::max_element(r.begin(), r.end()) >= tau) kept.push_back(j);
    }
    return kept;
}

ProposalBatch threshold_filter(const ProposalBatch& batch, double tau) {
    const auto kept = kept_indices(batch.probs, tau);
    ProposalBatch out;
    out.image_id = batch.image_id;
    out.image_size = batch.image_size;
    out.features_file = batch.features_file;
    out.probs = gather_rows(batch.probs, kept);
    for (std::size_t j : kept) {
        out.boxes.push_back(batch.boxes[j]);
        out.feature_rows.push_back(batch.feature_rows[j]);
    }
    return out;
}

Matrix normalize_labels(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (std::size_t j = 0; j < scores.rows(); ++j) {
        auto s = scores.row(j);
        auto dst = out.row(j);
        const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
        if (!(*hi > *lo)) {
            std::fill(dst.begin(), dst.end(), 1.0 / static_cast<double>(dst.size()));
            continue;
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            dst[i] = (s[i] - *lo) / (*hi - *lo);
            sum += dst[i];
        }
        for (double& v : dst) v /= sum;
    }
    return out;
}

Matrix fuse_labels(const Matrix& p_l, const Matrix& p_v) { return normalize_labels(p_l + p_v); }

HeadGradient soft_cross_entropy(const ClassifierHead& head, const Matrix& features, const Matrix& targets) {
    if (features.rows() != targets.rows() || targets.cols() != head.weights.cols()) {
        throw Error(ErrorCode::DimMismatch, "soft cross-entropy: feature/target shapes disagree");
    }
    HeadGradient g{0.0, Matrix(head.weights.rows(), head.weights.cols()), Matrix(1, head.weights.cols())};
    const std::size_t m = features.rows();
    if (m == 0) return g;

    const Matrix z = head_logits(head, features);
    Matrix d_logits(m, z.cols());
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) {
        auto zr = z.row(j);
        const double mx = *std::max_element(zr.begin(), zr.end());
        double sum = 0.0;
        for (double v : zr) sum += std::exp(v - mx);
        const double log_norm = mx + std::log(sum);
        double target_mass = 0.0;
        for (std::size_t i = 0; i < zr.size(); ++i) {
            g.loss -= targets(j, i) * (zr[i] - log_norm) * inv_m;
            target_mass += targets(j, i);
        }
        for (std::size_t i = 0; i < zr.size(); ++i) {
            d_logits(j, i) = (target_mass * std::exp(zr[i] - log_norm) - targets(j, i)) * inv_m;
        }
    }
    g.weights = matmul_tn(features, d_logits);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < d_logits.cols(); ++i) g.bias(0, i) += d_logits(j, i);
    return g;
}

double student_step(ClassifierHead& head, const Matrix& features, const Matrix& targets, Optimizer& optimizer) {
    if (features.rows() == 0) return 0.0;
    const HeadGradient g = soft_cross_entropy(head, features, targets);
    if (!std::isfinite(g.loss) || !g.weights.all_finite() || !g.bias.all_finite()) {
        throw Error(ErrorCode::DivergedStudent, "non-finite classification loss");
    }
    Matrix* ps[] = {&head.weights, &head.bias};
    const Matrix* gs[] = {&g.weights, &g.bias};
    optimizer.step(ps, gs);
    if (!head.weights.all_finite() || !head.bias.all_finite()) {
        throw Error(ErrorCode::DivergedStudent, "head weights became non-finite");
    }
    return g.loss;
}

void teacher_ema(ClassifierHead& teacher, const ClassifierHead& student, double rate) {
    if (teacher.weights.rows() != student.weights.rows() || teacher.weights.cols() != student.weights.cols() ||
        teacher.bias.cols() != student.bias.cols()) {
        throw Error(ErrorCode::DimMismatch, "teacher and student heads differ in shape");
    }
    auto blend = [rate](Matrix& t, const Matrix& s) {
        for (std::size_t k = 0; k < t.size(); ++k) t.data()[k] = rate * t.data()[k] + (1.0 - rate) * s.data()[k];
    };
    blend(teacher.weights, student.weights);
    blend(teacher.bias, student.bias);
}

CalibratedLabels calibrate_labels(const Matrix& features, const Matrix& p_hat, double tau, Fusion fusion,
                                  const LanguageKnowledgeGraph* lkg, const VisionKnowledgeGraph* vkg,
                                  double temperature, Diagnostics* diagnostics) {
    if (features.rows() != p_hat.rows()) throw Error(ErrorCode::DimMismatch, "features and p_hat row counts differ");
    CalibratedLabels out;
    out.kept = kept_indices(p_hat, tau);
    out.p_hat = gather_rows(p_hat, out.kept);
    const Matrix kept_features = gather_rows(features, out.kept);

    if (uses_lkg(fusion)) {
        if (!lkg) throw Error(ErrorCode::InvalidConfig, "fusion arm needs an LKG");
        out.p_l = out.kept.empty() ? Matrix(0, p_hat.cols())
                                   : lkg_calibrate(out.p_hat, gcn_forward(*lkg, kept_features, diagnostics).q_f);
    }
    if (uses_vkg(fusion)) {
        if (!vkg) throw Error(ErrorCode::InvalidConfig, "fusion arm needs a VKG");
        out.p_v = vkg_calibrate(*vkg, kept_features, out.p_hat, temperature);
    }

    switch (fusion) {
        case Fusion::Kgd: out.fused = fuse_labels(out.p_l, out.p_v); break;
        case Fusion::MtOnly: out.fused = normalize_labels(out.p_hat); break;
        case Fusion::LkgOnly: out.fused = normalize_labels(out.p_l); break;
        case Fusion::VkgOnly: out.fused = normalize_labels(out.p_v); break;
    }
    return out;
}

double accuracy(const ClassifierHead& head, const ProbeSet& probe, bool normalize_features) {
    if (probe.labels.empty()) return 0.0;
    Matrix f = probe.features;
    if (normalize_features) normalize_rows(f);
    const Matrix z = head_logits(head, f);
    std::size_t correct = 0;
    for (std::size_t j = 0; j < z.rows(); ++j) correct += argmax(z.row(j)) == probe.labels[j] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(probe.labels.size());
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

std::size_t Dataset::feature_dim() const {
    for (const auto& f : image_features)
        if (f.cols() > 0) return f.cols();
    return probe ? probe->features.cols() : 0;
}

Dataset load_dataset(const std::filesystem::path& manifest) {
    const json m = read_json(manifest);
    const auto base = manifest.parent_path();
    Dataset d;
    d.description = manifest.string();
    try {
        for (const auto& [key, _] : m.items()) {
            if (key != "lexicon" && key != "proposals" && key != "text_embeddings" && key != "probe") {
                throw Error(ErrorCode::FormatError, "dataset manifest: unknown key '" + key + "'");
            }
        }
        d.lexicon = parse_lexicon(resolve(base, m.at("lexicon").get<std::string>()));

        const auto proposals_path = resolve(base, m.at("proposals").get<std::string>());
        d.images = read_proposals(proposals_path);
        std::map<std::string, Matrix> files;
        for (const auto& img : d.images) {
            auto it = files.find(img.features_file);
            if (it == files.end()) {
                it = files.emplace(img.features_file,
                                   load_embeddings(resolve(proposals_path.parent_path(), img.features_file)))
                         .first;
            }
            if (img.probs.rows() > 0 && img.probs.cols() != d.lexicon.size()) {
                throw Error(ErrorCode::DimMismatch, "image '" + img.image_id + "' has " +
                                                        std::to_string(img.probs.cols()) + " probabilities for " +
                                                        std::to_string(d.lexicon.size()) + " categories");
            }
            Matrix f = gather_rows(it->second, img.feature_rows);
            if (img.feature_rows.empty()) f = Matrix(0, it->second.cols());
            d.image_features.push_back(std::move(f));
        }

        if (auto te = m.find("text_embeddings"); te != m.end()) {
            for (const auto& [key, v] : te->items()) {
                Matrix emb = load_embeddings(resolve(base, v.get<std::string>()));
                if (key == "names") d.name_embeddings = std::move(emb);
                else if (key == "definitions") d.definition_embeddings = std::move(emb);
                else if (key == "hierarchy") d.hierarchy_embeddings = std::move(emb);
                else if (key == "hierarchy_names") d.hierarchy_name_embeddings = std::move(emb);
                else throw Error(ErrorCode::FormatError, "unknown text embedding kind '" + key + "'");
            }
        }

        if (auto p = m.find("probe"); p != m.end()) {
            const auto probe_path = resolve(base, p->get<std::string>());
            const json pj = read_json(probe_path);
            ProbeSet probe;
            probe.features = load_embeddings(resolve(probe_path.parent_path(), pj.at("features_file").get<std::string>()));
            probe.labels = pj.at("labels").get<std::vector<std::size_t>>();
            if (probe.labels.size() != probe.features.rows()) {
                throw Error(ErrorCode::RowCountMismatch, "probe has " + std::to_string(probe.labels.size()) +
                                                             " labels for " + std::to_string(probe.features.rows()) +
                                                             " feature rows");
            }
            for (auto l : probe.labels) {
                if (l >= d.lexicon.size()) throw Error(ErrorCode::DimMismatch, "probe label out of range");
            }
            d.probe = std::move(probe);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, manifest.string() + ": " + e.what());
    }
    return d;
}

// ---------------------------------------------------------------------------
// Adaptation loop
// ---------------------------------------------------------------------------

json to_json(const AdaptationReport& r) {
    json iters = json::array();
    for (const auto& it : r.iterations) {
        iters.push_back({{"iteration", it.iteration},
                         {"loss_cls", it.loss_cls},
                         {"loss_lkg", it.loss_lkg},
                         {"kept_count", it.kept_count}});
    }
    json probe = {{"size", r.probe_size}};
    probe["initial_accuracy"] = r.initial_accuracy ? json(*r.initial_accuracy) : json(nullptr);
    probe["teacher_accuracy"] = r.teacher_accuracy ? json(*r.teacher_accuracy) : json(nullptr);
    probe["student_accuracy"] = r.student_accuracy ? json(*r.student_accuracy) : json(nullptr);
    json checkpoints = json::object();
    for (const auto& [role, file] : r.checkpoints) checkpoints[role] = file;
    return {{"config", to_json(r.config)},
            {"data", {{"source", r.data_source}, {"num_categories", r.num_categories}, {"feature_dim", r.feature_dim}}},
            {"iterations", std::move(iters)},
            {"probe", std::move(probe)},
            {"warnings", r.warnings},
            {"checkpoints", std::move(checkpoints)}};
}

namespace {

Matrix prepared_features(const Matrix& f, bool normalize) {
    Matrix out = f;
    if (normalize) normalize_rows(out);
    return out;
}

Matrix text_embeddings_for(const Dataset& data, const PromptSet& prompts, HyponymText hyponym_text,
                           std::size_t dim, std::uint64_t seed) {
    const std::optional<Matrix>* chosen = nullptr;
    switch (prompts.mode) {
        case PromptMode::Names: chosen = &data.name_embeddings; break;
        case PromptMode::Definitions: chosen = &data.definition_embeddings; break;
        case PromptMode::Hierarchy:
            chosen = hyponym_text == HyponymText::Name ? &data.hierarchy_name_embeddings : &data.hierarchy_embeddings;
            break;
    }
    if (*chosen) return FileEmbeddingProvider(**chosen).encode(prompts.prompts);
    return StubEncoder(dim, seed).encode(prompts.prompts);
}

void add_warnings(std::vector<std::string>& out, std::set<std::string>& seen, const Diagnostics& diag) {
    for (const auto& [w, detail] : diag.entries()) {
        std::string line = std::string(to_string(w)) + ": " + detail;
        if (seen.insert(line).second) out.push_back(std::move(line));
    }
}

}  // namespace

ClassifierHead fit_initial_head(const Dataset& data, const AdaptationConfig& config) {
    std::vector<double> f_data;
    std::vector<double> p_data;
    std::size_t rows = 0;
    for (std::size_t k = 0; k < data.images.size(); ++k) {
        const Matrix f = prepared_features(data.image_features[k], config.normalize_features);
        f_data.insert(f_data.end(), f.data().begin(), f.data().end());
        p_data.insert(p_data.end(), data.images[k].probs.data().begin(), data.images[k].probs.data().end());
        rows += f.rows();
    }
    const std::size_t dim = data.feature_dim();
    const std::size_t n_c = data.num_categories();
    ClassifierHead head = ClassifierHead::zeros(dim, n_c);
    if (rows == 0) return head;

    const Matrix features(rows, dim, std::move(f_data));
    // Probabilities may not sum to one (e.g. after background removal); fit their normalized shape.
    Matrix targets(rows, n_c, std::move(p_data));
    for (std::size_t j = 0; j < rows; ++j) {
        auto r = targets.row(j);
        double s = 0.0;
        for (double v : r) s += v;
        for (double& v : r) v = s > 0.0 ? v / s : 1.0 / static_cast<double>(n_c);
    }
    Optimizer opt({.kind = OptimizerKind::Adam, .lr = config.init_lr});
    for (std::size_t epoch = 0; epoch < config.init_epochs; ++epoch) student_step(head, features, targets, opt);
    return head;
}

AdaptationReport run_adaptation(const AdaptationConfig& config, const Dataset& data,
                                const std::optional<std::filesystem::path>& output_dir) {
    config.validate();
    const std::size_t n_c = data.num_categories();
    if (n_c < 2) throw Error(ErrorCode::TooFewCategories, "adaptation needs at least 2 categories");
    const std::size_t dim = data.feature_dim();
    if (dim == 0) throw Error(ErrorCode::EmptyInput, "dataset has no features");

    AdaptationReport report;
    report.config = config;
    report.data_source = data.description;
    report.num_categories = n_c;
    report.feature_dim = dim;
    std::set<std::string> seen_warnings;
    Diagnostics diag;

    if (config.ema_rate >= 0.9999 && config.iterations < 10000) {
        report_warning(&diag, Warning::SlowEmaRate,
                       "ema_rate " + std::to_string(config.ema_rate) + " with only " +
                           std::to_string(config.iterations) + " iterations; the teacher will barely move");
    }

    std::vector<Matrix> features;
    features.reserve(data.images.size());
    for (const auto& f : data.image_features) features.push_back(prepared_features(f, config.normalize_features));

    ClassifierHead teacher = fit_initial_head(data, config);
    ClassifierHead student = teacher;
    if (data.probe) {
        report.probe_size = data.probe->labels.size();
        report.initial_accuracy = accuracy(teacher, *data.probe, config.normalize_features);
    }

    std::optional<LanguageKnowledgeGraph> lkg;
    if (uses_lkg(config.fusion)) {
        const PromptSet prompts = expand_prompts(data.lexicon, config.lkg_mode, config.hyponym_text);
        const Matrix omega = text_embeddings_for(data, prompts, config.hyponym_text, dim, config.seed);
        lkg = lkg_extract(prompts, FileEmbeddingProvider(omega), {config.hidden_dim, config.seed});
        if (lkg->feature_dim() != dim) {
            throw Error(ErrorCode::DimMismatch, "prompt embeddings have dim " + std::to_string(lkg->feature_dim()) +
                                                    ", proposal features have dim " + std::to_string(dim));
        }
    }
    std::optional<VisionKnowledgeGraph> vkg;
    if (uses_vkg(config.fusion)) {
        std::vector<std::string> names;
        for (const auto& e : data.lexicon) names.push_back(e.category);
        const Matrix init = data.name_embeddings ? FileEmbeddingProvider(*data.name_embeddings).encode(names)
                                                 : StubEncoder(dim, config.seed).encode(names);
        if (init.cols() != dim) throw Error(ErrorCode::DimMismatch, "category embeddings do not match feature dim");
        vkg = vkg_init(init, {config.lambda, config.alpha, config.vkg_mode, config.raw_smoothing});
    }

    Optimizer student_opt({.kind = OptimizerKind::AdamW,
                           .lr = config.lr,
                           .weight_decay = config.weight_decay,
                           .cosine_schedule = config.cosine_schedule,
                           .total_steps = config.iterations});
    Optimizer gcn_opt({.kind = config.gcn_optimizer, .lr = config.gcn_lr});

    Rng order_rng(mix64(config.seed ^ 0x6F72646572ULL));
    std::vector<std::size_t> order(data.images.size());
    std::size_t cursor = order.size();
    auto next_image = [&]() {
        if (cursor == order.size()) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
            cursor = 0;
        }
        return order[cursor++];
    };

    for (std::size_t it = 0; it < config.iterations && !data.images.empty(); ++it) {
        std::vector<double> f_data;
        std::vector<double> p_data;
        std::size_t rows = 0;
        std::string ids;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const std::size_t k = next_image();
            const Matrix& f = features[k];
            f_data.insert(f_data.end(), f.data().begin(), f.data().end());
            // The first batch uses the fixture's own teacher output.
            const Matrix p = it == 0 ? data.images[k].probs : head_probs(teacher, f);
            p_data.insert(p_data.end(), p.data().begin(), p.data().end());
            rows += f.rows();
            ids += (ids.empty() ? "" : ",") + data.images[k].image_id;
        }
        const Matrix batch_f(rows, dim, std::move(f_data));
        const Matrix batch_p(rows, n_c, std::move(p_data));

        IterationRecord rec;
        rec.iteration = it;
        try {
            const CalibratedLabels labels = calibrate_labels(batch_f, batch_p, config.tau, config.fusion,
                                                             lkg ? &*lkg : nullptr, vkg ? &*vkg : nullptr,
                                                             config.vkg_temperature, &diag);
            const Matrix kept_f = gather_rows(batch_f, labels.kept);
            rec.kept_count = labels.kept.size();
            rec.loss_cls = student_step(student, kept_f, labels.fused, student_opt);
            if (lkg) {
                rec.loss_lkg = gcn_step(*lkg, kept_f, gcn_opt, &diag);
                ++report.lkg_invocations;
            }
            teacher_ema(teacher, student, config.ema_rate);
            if (vkg) {
                vkg_update(*vkg, batch_centroids(kept_f, labels.p_hat), &diag);
                ++report.vkg_invocations;
            }
        } catch (const Error& e) {
            throw Error(e.code(), "iteration " + std::to_string(it) + ", images [" + ids + "]: " + e.message());
        }
        report.iterations.push_back(rec);
    }
    add_warnings(report.warnings, seen_warnings, diag);

    if (data.probe) {
        report.teacher_accuracy = accuracy(teacher, *data.probe, config.normalize_features);
        report.student_accuracy = accuracy(student, *data.probe, config.normalize_features);
    }

    if (output_dir) {
        std::filesystem::create_directories(*output_dir);
        save_head(*output_dir / "teacher_head.kgde", teacher);
        save_head(*output_dir / "student_head.kgde", student);
        report.checkpoints.emplace_back("teacher_head", "teacher_head.kgde");
        report.checkpoints.emplace_back("student_head", "student_head.kgde");
        if (lkg) report.checkpoints.emplace_back("lkg", save_lkg(*output_dir, *lkg).filename().string());
        if (vkg) report.checkpoints.emplace_back("vkg", save_vkg(*output_dir, *vkg).filename().string());
        std::ofstream out(*output_dir / "report.json", std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write report in '" + output_dir->string() + "'");
        out << to_json(report).dump(2) << '\n';
    }

    report.teacher = std::move(teacher);
    report.student = std::move(student);
    report.lkg = std::move(lkg);
    report.vkg = std::move(vkg);
    return report;
}

}  // namespace kgd
