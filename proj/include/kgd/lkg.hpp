#pragma once

#include <cstdint>
#include <filesystem>

#include "kgd/embedding_io.hpp"
#include "kgd/error.hpp"
#include "kgd/lexicon.hpp"
#include "kgd/matrix.hpp"
#include "kgd/optim.hpp"

namespace kgd {

/// Weights of the two-layer graph convolution: w0 is d x h, w1 is h x N_c.
struct GcnParams {
    Matrix w0;
    Matrix w1;

    std::size_t hidden_dim() const { return w0.cols(); }
    friend bool operator==(const GcnParams&, const GcnParams&) = default;
};

/// Prompt nodes (one embedding row per prompt, owned by a category) together
/// with the GCN that reasons over them.
struct LanguageKnowledgeGraph {
    PromptSet prompts;
    Matrix node_features;  // N_L x d
    GcnParams gcn;

    std::size_t num_categories() const { return prompts.num_categories(); }
    std::size_t num_nodes() const { return node_features.rows(); }
    std::size_t feature_dim() const { return node_features.cols(); }
};

struct LkgOptions {
    std::size_t hidden_dim = 256;
    std::uint64_t seed = 0;
};

/// Glorot-uniform initialization from a seeded generator.
GcnParams init_gcn(std::size_t feature_dim, std::size_t hidden_dim, std::size_t num_categories,
                   std::uint64_t seed);

/// Encodes every prompt and initializes the GCN. Requires at least two categories.
LanguageKnowledgeGraph lkg_extract(const PromptSet& prompts, const EmbeddingProvider& encoder,
                                   const LkgOptions& options = {});

/// Intermediates kept for the backward pass. Rows [0, proposals) belong to the
/// proposal features, the remaining rows to the prompt nodes.
struct GcnCache {
    std::size_t proposals = 0;
    Matrix norm_adjacency;  // D^-1/2 A D^-1/2 over [F; Omega]
    Matrix propagated_input;  // Â·H0
    Matrix pre_activation;  // Â·H0·W0
    Matrix propagated_hidden;  // Â·ReLU(Â·H0·W0)
    Matrix probs;  // softmax(Â·ReLU(Â·H0·W0)·W1)
};

struct GcnOutput {
    Matrix q_f;  // M x N_c
    Matrix q_omega;  // N_L x N_c
    GcnCache cache;
};

/// Two-layer GCN over the stacked features [F; Omega] with a shared
/// symmetric-normalized Gaussian affinity (unit diagonal). M = 0 is allowed.
GcnOutput gcn_forward(const GcnParams& params, const Matrix& node_features, const Matrix& proposal_features,
                      Diagnostics* diagnostics = nullptr);
GcnOutput gcn_forward(const LanguageKnowledgeGraph& g, const Matrix& proposal_features,
                      Diagnostics* diagnostics = nullptr);

struct GcnGradient {
    double loss = 0.0;
    Matrix w0;
    Matrix w1;
};

/// Node cross-entropy -sum_j log Q^Omega[j, owner(j)] and its exact gradient.
/// The affinity is treated as a constant.
GcnGradient gcn_loss_and_grad(const GcnParams& params, const Matrix& node_features,
                              std::span<const std::size_t> owners, const Matrix& proposal_features,
                              Diagnostics* diagnostics = nullptr);
GcnGradient gcn_loss_and_grad(const LanguageKnowledgeGraph& g, const Matrix& proposal_features,
                              Diagnostics* diagnostics = nullptr);

/// Applies one optimizer step; throws DivergedGcn on a non-finite gradient or result.
void gcn_apply(GcnParams& params, const GcnGradient& grad, Optimizer& optimizer);

/// One training step on the batch; returns the loss evaluated before the update.
double gcn_step(LanguageKnowledgeGraph& g, const Matrix& proposal_features, Optimizer& optimizer,
                Diagnostics* diagnostics = nullptr);

/// p^l = p_hat ⊙ Q^F, elementwise per proposal.
Matrix lkg_calibrate(const Matrix& p_hat, const Matrix& q_f);

/// Writes `<stem>.json` plus `<stem>_omega.kgde`, `<stem>_w0.kgde`, `<stem>_w1.kgde`
/// into `dir`. Returns the header path.
std::filesystem::path save_lkg(const std::filesystem::path& dir, const LanguageKnowledgeGraph& g,
                               const std::string& stem = "lkg");
LanguageKnowledgeGraph load_lkg(const std::filesystem::path& header);

}  // namespace kgd
