#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace morphotok {

using Vec = std::vector<double>;

struct CoherenceConfig {
    std::size_t window = 3;
    double temperature = 0.5;
};

/// Learned-transform residual gate: W1 tanh(W2 e + b) + theta e.
struct GateParams {
    std::size_t dim = 0;
    Vec w1; // dim x dim, row-major
    Vec w2; // dim x dim, row-major
    Vec b;  // dim
    double theta = 1.0;

    static GateParams identity(std::size_t dim);
    static GateParams seeded_random(std::size_t dim, std::uint64_t seed, double scale,
                                    double theta);

    /// True when the gate composed with renormalization is exactly the
    /// identity (W1 == 0, so only the theta rescaling remains).
    bool is_identity() const;
    void validate() const;
};

/// Token-form keyed unit vectors on the sphere S^(d-1).
struct EmbeddingTable {
    std::size_t dim = 32;
    std::map<std::u32string, Vec, std::less<>> entries;

    const Vec* find(std::u32string_view form) const;
    void validate() const;
};

std::string embedding_table_to_json(const EmbeddingTable& table);
EmbeddingTable embedding_table_from_json(std::string_view json_text);
std::string gate_params_to_json(const GateParams& gate);
GateParams gate_params_from_json(std::string_view json_text);

// --- operations --------------------------------------------------------------

/// Deterministic unit vector from (form, seed): a hash-seeded Gaussian draw,
/// normalized. Degenerate all-zero draws retry with an incremented nonce.
Vec init_embedding(std::u32string_view form, std::uint64_t seed, std::size_t d);

/// Attention-weighted mean cosine of e against the context set:
/// sum_j softmax_j(<e,e_j>/tau) * <e,e_j>. Result clamped to [-1, 1].
double coherence(std::span<const double> e, std::span<const double* const> context,
                 const CoherenceConfig& cfg);
double coherence(const Vec& e, const std::vector<Vec>& context, const CoherenceConfig& cfg);

/// Euclidean gradient of coherence in e; flows through both the cosines and
/// the softmax weights.
Vec coherence_gradient(std::span<const double> e, std::span<const double* const> context,
                       const CoherenceConfig& cfg);
Vec coherence_gradient(const Vec& e, const std::vector<Vec>& context,
                       const CoherenceConfig& cfg);

/// Tangent-space projection at e: g - <g,e> e.
Vec riemannian_project(std::span<const double> e, std::span<const double> g);

/// Exponential map on the sphere with step angle alpha * |tangent|.
/// Tangents below 1e-12 leave e unchanged (bit-exact).
Vec geodesic_step(std::span<const double> e, std::span<const double> tangent, double alpha);

/// Step plus parallel transport of the tangent to the new point; stepping
/// again with the transported tangent and -alpha returns to the start.
std::pair<Vec, Vec> geodesic_step_with_transport(std::span<const double> e,
                                                 std::span<const double> tangent,
                                                 double alpha);

/// W1 tanh(W2 e + b) + theta e; output deliberately not normalized.
Vec residual_gate(std::span<const double> e, const GateParams& gate);

/// Mean over tokens of |displacement - lambda * grad|^2. The gradient list
/// holds tangent-projected coherence gradients.
double alignment_loss(const std::vector<Vec>& displacements,
                      const std::vector<Vec>& coherence_grads, double lambda);

/// v / |v|; returns false (and leaves out untouched) for |v| below 1e-12.
bool normalize_in_place(Vec& v);

} // namespace morphotok
