#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kgd/embedding_io.hpp"
#include "kgd/error.hpp"
#include "kgd/lexicon.hpp"
#include "kgd/lkg.hpp"
#include "kgd/matrix.hpp"
#include "kgd/optim.hpp"
#include "kgd/vkg.hpp"

namespace kgd {

/// Which pseudo-label source drives the student.
enum class Fusion {
    Kgd,  // N(p^l + p^v)
    MtOnly,  // N(p_hat), plain mean teacher
    LkgOnly,  // N(p^l)
    VkgOnly,  // N(p^v)
};

std::string_view to_string(Fusion f);
Fusion parse_fusion(std::string_view text);
bool uses_lkg(Fusion f);
bool uses_vkg(Fusion f);

struct AdaptationConfig {
    double tau = 0.25;
    double ema_rate = 0.9999;
    double lambda = 0.99;
    double alpha = 0.5;
    PromptMode lkg_mode = PromptMode::Hierarchy;
    HyponymText hyponym_text = HyponymText::Definition;
    VkgMode vkg_mode = VkgMode::Dynamic;
    bool raw_smoothing = false;
    double vkg_temperature = 1.0;
    Fusion fusion = Fusion::Kgd;

    std::size_t iterations = 1000;
    std::size_t batch_size = 2;

    // Student head optimizer (AdamW).
    double lr = 5e-6;
    double weight_decay = 1e-4;
    bool cosine_schedule = true;

    // GCN optimizer.
    OptimizerKind gcn_optimizer = OptimizerKind::Adam;
    double gcn_lr = 1e-3;
    std::size_t hidden_dim = 256;

    // Fitting the initial head to the fixture teacher probabilities.
    std::size_t init_epochs = 300;
    double init_lr = 0.05;

    bool normalize_features = true;
    std::uint64_t seed = 0;

    /// Throws InvalidConfig on any out-of-range field.
    void validate() const;
};

nlohmann::json to_json(const AdaptationConfig& c);
/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
AdaptationConfig config_from_json(const nlohmann::json& j, AdaptationConfig base = {});

/// Settings used for the desk-scale synthetic benchmark.
AdaptationConfig synthetic_benchmark_config();

/// Linear classifier over proposal features standing in for the detector's
/// classification branch.
struct ClassifierHead {
    Matrix weights;  // d x N_c
    Matrix bias;  // 1 x N_c

    static ClassifierHead zeros(std::size_t dim, std::size_t num_categories);
    friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

Matrix head_logits(const ClassifierHead& head, const Matrix& features);
Matrix head_probs(const ClassifierHead& head, const Matrix& features);

void save_head(const std::filesystem::path& path, const ClassifierHead& head);
ClassifierHead load_head(const std::filesystem::path& path);

/// Indices of proposals whose top probability is >= tau, in order.
std::vector<std::size_t> kept_indices(const Matrix& p_hat, double tau);
ProposalBatch threshold_filter(const ProposalBatch& batch, double tau);

/// N(s): min-max scale each row to [0,1] (constant rows become uniform), then
/// divide by the row sum.
Matrix normalize_labels(const Matrix& scores);
/// p_tilde = N(p^l + p^v).
Matrix fuse_labels(const Matrix& p_l, const Matrix& p_v);

struct HeadGradient {
    double loss = 0.0;
    Matrix weights;
    Matrix bias;
};

/// Mean soft-target cross-entropy over rows and its gradient.
HeadGradient soft_cross_entropy(const ClassifierHead& head, const Matrix& features, const Matrix& targets);

/// One optimizer step on the kept proposals. An empty batch is a no-op
/// returning 0. Throws DivergedStudent on a non-finite loss.
double student_step(ClassifierHead& head, const Matrix& features, const Matrix& targets, Optimizer& optimizer);

/// teacher <- rate·teacher + (1 - rate)·student.
void teacher_ema(ClassifierHead& teacher, const ClassifierHead& student, double rate);

/// Pseudo labels for one batch of proposals.
struct CalibratedLabels {
    std::vector<std::size_t> kept;  // indices into the input rows
    Matrix p_hat;  // kept rows only
    Matrix p_l;  // empty unless the LKG was used
    Matrix p_v;  // empty unless the VKG was used
    Matrix fused;  // normalized soft targets, one row per kept proposal
};

/// Thresholds and calibrates. `lkg`/`vkg` may be null when the fusion arm does not use them.
CalibratedLabels calibrate_labels(const Matrix& features, const Matrix& p_hat, double tau, Fusion fusion,
                                  const LanguageKnowledgeGraph* lkg, const VisionKnowledgeGraph* vkg,
                                  double temperature = 1.0, Diagnostics* diagnostics = nullptr);

/// Labeled held-out features for accuracy measurement.
struct ProbeSet {
    Matrix features;
    std::vector<std::size_t> labels;
};

double accuracy(const ClassifierHead& head, const ProbeSet& probe, bool normalize_features);

/// Everything the adaptation loop reads, resolved from a dataset manifest.
struct Dataset {
    std::string description;
    std::vector<LexiconEntry> lexicon;
    std::vector<ProposalBatch> images;
    std::vector<Matrix> image_features;  // one matrix per image, rows aligned with proposals
    std::optional<Matrix> name_embeddings;
    std::optional<Matrix> definition_embeddings;
    std::optional<Matrix> hierarchy_embeddings;
    std::optional<Matrix> hierarchy_name_embeddings;
    std::optional<ProbeSet> probe;

    std::size_t num_categories() const { return lexicon.size(); }
    std::size_t feature_dim() const;
};

/// Reads `dataset.json`:
///   {"lexicon": path, "proposals": path,
///    "text_embeddings": {"names"|"definitions"|"hierarchy"|"hierarchy_names": path},
///    "probe": path}
/// Relative paths resolve against the manifest directory. Missing text
/// embeddings fall back to the stub encoder.
Dataset load_dataset(const std::filesystem::path& manifest);

struct IterationRecord {
    std::size_t iteration = 0;
    double loss_cls = 0.0;
    double loss_lkg = 0.0;
    std::size_t kept_count = 0;
};

struct AdaptationReport {
    AdaptationConfig config;
    std::string data_source;
    std::size_t num_categories = 0;
    std::size_t feature_dim = 0;
    std::vector<IterationRecord> iterations;
    std::optional<double> initial_accuracy;
    std::optional<double> teacher_accuracy;
    std::optional<double> student_accuracy;
    std::size_t probe_size = 0;
    std::vector<std::string> warnings;
    std::vector<std::pair<std::string, std::string>> checkpoints;  // role -> file name

    // Populated in memory for callers; not part of the JSON.
    ClassifierHead teacher;
    ClassifierHead student;
    std::optional<LanguageKnowledgeGraph> lkg;
    std::optional<VisionKnowledgeGraph> vkg;
    std::size_t lkg_invocations = 0;
    std::size_t vkg_invocations = 0;
};

nlohmann::json to_json(const AdaptationReport& r);

/// Fits a zero-initialized head to the teacher probabilities of every fixture
/// proposal (full-batch Adam).
ClassifierHead fit_initial_head(const Dataset& data, const AdaptationConfig& config);

/// The full loop. If `output_dir` is set, writes report.json and checkpoints there.
AdaptationReport run_adaptation(const AdaptationConfig& config, const Dataset& data,
                                const std::optional<std::filesystem::path>& output_dir = std::nullopt);

}  // namespace kgd
