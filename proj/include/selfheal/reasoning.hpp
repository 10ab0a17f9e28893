#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "selfheal/matrix.hpp"
#include "selfheal/perception.hpp"

namespace selfheal::reasoning {

using numerics::Matrix;

/// Windowed event-count matrix X (m windows x d event types) with the frozen
/// event ordering every downstream matrix shares.
struct EventMatrix {
    Matrix counts;  // integral values stored as doubles
    std::vector<std::string> event_order;
    std::vector<std::int64_t> row_start_ms;
    std::int64_t window_len_ms = 60000;

    std::size_t windows() const { return counts.rows(); }
    std::size_t types() const { return counts.cols(); }
};

/// Penalty constants for one mask family: small for historically supported
/// pairs, background for unknown pairs, large for implausible reversals.
struct PenaltySet {
    double prior = 0.1;
    double rev = 10.0;
    double bg = 1.0;
};

struct PriorMasks {
    Matrix w_mask;
    Matrix a_mask;
    std::size_t intra_pairs = 0;
    std::size_t inter_pairs = 0;
};

struct SolveConfig {
    double lambda_w = 0.1;
    double lambda_a = 0.1;
    double theta_prune = 0.05;
    int max_outer = 100;
    int max_inner = 500;
    double h_tolerance = 1e-8;
    double rho_init = 1.0;
    double rho_max = 1e16;
    double rho_multiplier = 10.0;
    /// Escalate rho when h fails to shrink by at least this fraction.
    double required_h_shrink = 0.25;
    double inner_tolerance = 1e-6;
    // prune_and_resolve knobs
    double damp_factor = 0.9;
    double damp_band = 1.1;       // weights in [theta, damp_band*theta) get damped
    double direction_ratio = 1.25;  // bidirectional pairs closer than this get resolved
};

struct SolveResult {
    Matrix w;
    Matrix a;
    bool converged = false;
    bool iteration_capped = false;
    double final_h = 0.0;
    int outer_iterations = 0;
};

struct GraphEdge {
    int src = 0;
    int dst = 0;
    double weight = 0.0;
    int lag = 0;  // 0 = intra-slice, 1 = inter-slice
};

/// Pruned weighted digraph over event types. The intra-slice subgraph is
/// acyclic; node labels are template ids in the frozen event order.
struct CausalGraph {
    std::vector<std::string> nodes;
    std::vector<GraphEdge> intra;
    std::vector<GraphEdge> inter;
};

/// Windows tiling [min_ts, max_ts] with the given stride; the default
/// stride of 0 means tumbling (stride = window length), which keeps rows
/// disjoint as the lag-1 model assumes. event_order is first-appearance
/// order and stays frozen downstream.
EventMatrix aggregate_windows(const std::vector<perception::StructuredEvent>& events,
                              std::int64_t window_len_ms, std::int64_t stride_ms = 0);

/// Per-entry case analysis: prior pairs get c_prior, their bare reversals
/// c_rev, everything else c_bg. Pairs supported in both directions get
/// c_prior in both.
PriorMasks build_prior_masks(const std::vector<std::pair<int, int>>& intra_pairs,
                             const std::vector<std::pair<int, int>>& inter_pairs,
                             std::size_t type_count, const PenaltySet& intra_penalties,
                             const PenaltySet& inter_penalties);

struct LossGrad {
    double loss = 0.0;
    Matrix grad_w;
    Matrix grad_a;
};

/// Standardize columns (mean 0, variance 1, variance floor 1e-8).
Matrix standardize(const Matrix& counts);

/// Least-squares VAR(1) fit on standardized counts:
/// loss = 1/(2(m-1)) * ||Y - Y W - Z A||_F^2 with Y = rows 1..m-1 and
/// Z = rows 0..m-2; gradients are the exact analytic matrices.
LossGrad loss_and_grad(const EventMatrix& x, const Matrix& w, const Matrix& a);

struct Acyclicity {
    double h = 0.0;
    Matrix grad;
};

/// h(W) = tr(e^{W o W}) - d, zero exactly on DAGs; grad = e^{W o W}^T o 2W.
Acyclicity acyclicity(const Matrix& w);

/// Augmented-Lagrangian outer loop on h(W)=0 with proximal-gradient inner
/// steps; the weighted L1 terms are applied by element-wise soft
/// thresholding with threshold step*lambda*mask. W's diagonal is clamped to
/// zero throughout.
SolveResult solve(const EventMatrix& x, const PriorMasks& masks, const SolveConfig& cfg);

/// Threshold pruning, near-threshold damping, bidirectional direction
/// resolution by prior support, and a final acyclicity sweep that drops the
/// globally weakest intra edge on any residual cycle.
CausalGraph prune_and_resolve(const Matrix& w, const Matrix& a, const PriorMasks& masks,
                              const std::vector<std::string>& event_order,
                              const SolveConfig& cfg);

bool has_intra_cycle(const CausalGraph& graph);

/// Single-document serialization {nodes, intra, inter, config echo}; stable
/// field order for golden files.
std::string graph_to_json(const CausalGraph& graph, const std::string& config_hash);
CausalGraph graph_from_json(const std::string& doc);

}  // namespace selfheal::reasoning
