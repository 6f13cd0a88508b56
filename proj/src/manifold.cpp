#include "morphotok/manifold.hpp"

#include "morphotok/corpus.hpp"
#include "morphotok/errors.hpp"
#include "morphotok/kernels.hpp"
#include "morphotok/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

namespace morphotok {

namespace k = kernels;

// --- GateParams ----------------------------------------------------------------

GateParams GateParams::identity(std::size_t dim) {
    GateParams g;
    g.dim = dim;
    g.w1.assign(dim * dim, 0.0);
    g.w2.assign(dim * dim, 0.0);
    g.b.assign(dim, 0.0);
    g.theta = 1.0;
    return g;
}

GateParams GateParams::seeded_random(std::size_t dim, std::uint64_t seed, double scale,
                                     double theta) {
    GateParams g;
    g.dim = dim;
    g.theta = theta;
    g.w1.resize(dim * dim);
    g.w2.resize(dim * dim);
    g.b.assign(dim, 0.0);
    SplitMix64 rng(derive_seed(seed, "gate-params"));
    const double s = scale / std::sqrt(static_cast<double>(dim));
    for (auto& x : g.w1) x = s * rng.next_gaussian();
    for (auto& x : g.w2) x = rng.next_gaussian() / std::sqrt(static_cast<double>(dim));
    g.validate();
    return g;
}

bool GateParams::is_identity() const {
    // With W1 == 0 the gate is theta * e, a pure rescaling that the caller's
    // renormalization cancels; the composite map is exactly the identity.
    return std::all_of(w1.begin(), w1.end(), [](double x) { return x == 0.0; });
}

void GateParams::validate() const {
    if (w1.size() != dim * dim || w2.size() != dim * dim || b.size() != dim)
        throw DimensionMismatch("gate parameter shapes do not match dim");
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must be in [0,1]");
    const auto finite = [](const Vec& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    if (!finite(w1) || !finite(w2) || !finite(b))
        throw ConfigError("gate parameters must be finite");
}

// --- EmbeddingTable --------------------------------------------------------------

const Vec* EmbeddingTable::find(std::u32string_view form) const {
    const auto it = entries.find(form);
    return it == entries.end() ? nullptr : &it->second;
}

void EmbeddingTable::validate() const {
    for (const auto& [form, v] : entries) {
        if (v.size() != dim) throw DimensionMismatch("embedding dim mismatch");
        const double n = std::sqrt(k::sqnorm(v.data(), v.size()));
        if (std::abs(n - 1.0) > 1e-9)
            throw Error("embedding for a form is not unit norm");
    }
}

// --- JSON ------------------------------------------------------------------------

std::string embedding_table_to_json(const EmbeddingTable& table) {
    nlohmann::json j;
    j["dim"] = table.dim;
    auto& entries = j["entries"] = nlohmann::json::object();
    for (const auto& [form, v] : table.entries) entries[encode_utf8(form)] = v;
    return j.dump(2) + "\n";
}

EmbeddingTable embedding_table_from_json(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
        EmbeddingTable table;
        table.dim = j.at("dim").get<std::size_t>();
        for (const auto& [form, v] : j.at("entries").items())
            table.entries[decode_utf8(form)] = v.get<Vec>();
        table.validate();
        return table;
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("embedding table JSON: ") + e.what());
    }
}

std::string gate_params_to_json(const GateParams& gate) {
    nlohmann::json j;
    j["dim"] = gate.dim;
    j["w1"] = gate.w1;
    j["w2"] = gate.w2;
    j["b"] = gate.b;
    j["theta"] = gate.theta;
    return j.dump(2) + "\n";
}

GateParams gate_params_from_json(std::string_view json_text) {
    try {
        nlohmann::json j = nlohmann::json::parse(json_text);
        GateParams g;
        g.dim = j.at("dim").get<std::size_t>();
        g.w1 = j.at("w1").get<Vec>();
        g.w2 = j.at("w2").get<Vec>();
        g.b = j.at("b").get<Vec>();
        g.theta = j.at("theta").get<double>();
        g.validate();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw DecodeError(std::string("gate params JSON: ") + e.what());
    }
}

// --- operations --------------------------------------------------------------------

Vec init_embedding(std::u32string_view form, std::uint64_t seed, std::size_t d) {
    if (d < 2) throw ConfigError("embedding dimension must be >= 2");
    const std::uint64_t base = hash_units(form);
    for (std::uint64_t nonce = 0;; ++nonce) {
        SplitMix64 rng(mix_seed(mix_seed(base, seed), nonce));
        Vec v(d);
        for (auto& x : v) x = rng.next_gaussian();
        if (normalize_in_place(v)) return v;
    }
}

bool normalize_in_place(Vec& v) {
    const double n = std::sqrt(k::sqnorm(v.data(), v.size()));
    if (n < 1e-12) return false;
    k::scal(v.data(), 1.0 / n, v.size());
    return true;
}

namespace {

struct SoftmaxState {
    std::vector<double> sims;    // <e, e_j>
    std::vector<double> weights; // softmax(<e,e_j>/tau)
    double coherence = 0.0;
};

SoftmaxState attention(std::span<const double> e, std::span<const double* const> context,
                       double tau) {
    if (context.empty()) throw EmptyContext("coherence requires a nonempty context");
    if (tau <= 0.0) throw ConfigError("temperature must be positive");
    SoftmaxState st;
    const std::size_t n = context.size();
    st.sims.resize(n);
    st.weights.resize(n);
    double smax = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
        st.sims[j] = k::dot(e.data(), context[j], e.size());
        smax = std::max(smax, st.sims[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        st.weights[j] = std::exp((st.sims[j] - smax) / tau);
        z += st.weights[j];
    }
    double c = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        st.weights[j] /= z;
        c += st.weights[j] * st.sims[j];
    }
    st.coherence = c;
    return st;
}

} // namespace

double coherence(std::span<const double> e, std::span<const double* const> context,
                 const CoherenceConfig& cfg) {
    const SoftmaxState st = attention(e, context, cfg.temperature);
    return std::clamp(st.coherence, -1.0, 1.0);
}

double coherence(const Vec& e, const std::vector<Vec>& context, const CoherenceConfig& cfg) {
    std::vector<const double*> ptrs;
    ptrs.reserve(context.size());
    for (const auto& c : context) {
        if (c.size() != e.size()) throw DimensionMismatch("context dim mismatch");
        ptrs.push_back(c.data());
    }
    return coherence(std::span<const double>(e), std::span<const double* const>(ptrs), cfg);
}

Vec coherence_gradient(std::span<const double> e, std::span<const double* const> context,
                       const CoherenceConfig& cfg) {
    const SoftmaxState st = attention(e, context, cfg.temperature);
    const std::size_t d = e.size();
    const std::size_t n = context.size();

    // grad = ebar + (1/tau) * (sum_j a_j s_j e_j - C * ebar),
    // with ebar the attention-weighted context mean.
    Vec ebar(d, 0.0), q(d, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        k::axpy(ebar.data(), st.weights[j], context[j], d);
        k::axpy(q.data(), st.weights[j] * st.sims[j], context[j], d);
    }
    Vec grad(d);
    const double inv_tau = 1.0 / cfg.temperature;
    for (std::size_t i = 0; i < d; ++i)
        grad[i] = ebar[i] + inv_tau * (q[i] - st.coherence * ebar[i]);
    return grad;
}

Vec coherence_gradient(const Vec& e, const std::vector<Vec>& context,
                       const CoherenceConfig& cfg) {
    std::vector<const double*> ptrs;
    ptrs.reserve(context.size());
    for (const auto& c : context) {
        if (c.size() != e.size()) throw DimensionMismatch("context dim mismatch");
        ptrs.push_back(c.data());
    }
    return coherence_gradient(std::span<const double>(e),
                              std::span<const double* const>(ptrs), cfg);
}

Vec riemannian_project(std::span<const double> e, std::span<const double> g) {
    if (e.size() != g.size()) throw DimensionMismatch("project: shapes differ");
    Vec t(g.begin(), g.end());
    const double radial = k::dot(g.data(), e.data(), e.size());
    k::axpy(t.data(), -radial, e.data(), e.size());
    return t;
}

namespace {

double checked_tangent_norm(std::span<const double> e, std::span<const double> tangent) {
    if (e.size() != tangent.size()) throw DimensionMismatch("geodesic: shapes differ");
    const double norm = std::sqrt(k::sqnorm(tangent.data(), tangent.size()));
    if (norm < 1e-12) return 0.0;
    const double radial = std::abs(k::dot(tangent.data(), e.data(), e.size()));
    if (radial > 1e-9 * std::max(1.0, norm))
        throw NonTangentInput("tangent has a radial component of " + std::to_string(radial));
    return norm;
}

} // namespace

Vec geodesic_step(std::span<const double> e, std::span<const double> tangent, double alpha) {
    const double norm = checked_tangent_norm(e, tangent);
    if (norm == 0.0) return Vec(e.begin(), e.end());
    const double s = alpha * norm;
    const double c = std::cos(s);
    const double m = std::sin(s) / norm;
    Vec out(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) out[i] = c * e[i] + m * tangent[i];
    return out;
}

std::pair<Vec, Vec> geodesic_step_with_transport(std::span<const double> e,
                                                 std::span<const double> tangent,
                                                 double alpha) {
    const double norm = checked_tangent_norm(e, tangent);
    if (norm == 0.0) return {Vec(e.begin(), e.end()), Vec(tangent.begin(), tangent.end())};
    const double s = alpha * norm;
    const double c = std::cos(s);
    const double sn = std::sin(s);
    Vec point(e.size()), carried(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        const double unit_t = tangent[i] / norm;
        point[i] = c * e[i] + sn * unit_t;
        carried[i] = (c * unit_t - sn * e[i]) * norm;
    }
    return {std::move(point), std::move(carried)};
}

Vec residual_gate(std::span<const double> e, const GateParams& gate) {
    if (e.size() != gate.dim) throw DimensionMismatch("gate dim mismatch");
    const std::size_t d = gate.dim;
    Vec hidden(d);
    k::matvec(gate.w2.data(), e.data(), hidden.data(), d, d);
    for (std::size_t i = 0; i < d; ++i) hidden[i] = std::tanh(hidden[i] + gate.b[i]);
    Vec out(d);
    k::matvec(gate.w1.data(), hidden.data(), out.data(), d, d);
    k::axpy(out.data(), gate.theta, e.data(), d);
    return out;
}

double alignment_loss(const std::vector<Vec>& displacements,
                      const std::vector<Vec>& coherence_grads, double lambda) {
    if (displacements.size() != coherence_grads.size() || displacements.empty())
        throw LengthMismatch("alignment_loss lists must align and be nonempty");
    double total = 0.0;
    for (std::size_t t = 0; t < displacements.size(); ++t) {
        const Vec& dx = displacements[t];
        const Vec& g = coherence_grads[t];
        if (dx.size() != g.size()) throw DimensionMismatch("alignment_loss dim mismatch");
        double sq = 0.0;
        for (std::size_t i = 0; i < dx.size(); ++i) {
            const double r = dx[i] - lambda * g[i];
            sq += r * r;
        }
        total += sq;
    }
    return total / static_cast<double>(displacements.size());
}

} // namespace morphotok
