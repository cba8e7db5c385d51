#pragma once

#include <array>
#include <string>
#include <vector>

#include "msfa/autodiff.hpp"
#include "msfa/rng.hpp"
#include "msfa/semantic.hpp"

// Iterative bidirectional exchange between a visual feature map and a semantic vector.
namespace msfa::biva {

struct BivaParams {
  int max_rounds = 5;
  double eps_delta = 1e-3;
  double eps_quality = 1e-3;

  void validate() const;
};

// Region attention: A = sigmoid(conv3d(expand(P s_region))).
struct RegionAttention {
  ad::ParamId proj_w;  // [c, d_s], no bias so that s = 0 expands to a zero field
  ad::ParamId conv_w;  // [1, c, 3, 3, 3]
  ad::ParamId conv_b;  // [1]
};

// S_visual = H(x + R(x)), H = two tanh dense layers, R = one dense layer.
struct Abstractor {
  ad::ParamId h1_w, h1_b, h2_w, h2_b, res_w, res_b;
};

// g = sigmoid(W [S_visual; S_text] + b).
struct RefineGate {
  ad::ParamId w, b;  // [d_s, 2 d_s], [d_s]
};

struct BivaWeights {
  semantic::RegionDecoupler decoupler;
  std::array<RegionAttention, 3> attention;  // WT, TC, ET
  Abstractor abstractor;
  RefineGate gate;
  std::size_t channels = 0;
  std::size_t d_s = 0;
  std::size_t hidden = 0;

  static BivaWeights create(ad::ParameterSet& params, const std::string& prefix, std::size_t channels,
                            std::size_t d_s, std::size_t hidden, Rng& rng);
};

struct AttentionResult {
  ad::Var features;   // F * A, [c,D,H,W]
  ad::Var attention;  // A, [1,D,H,W]
};

AttentionResult semantic_to_visual(ad::Graph& g, const RegionAttention& w, ad::Var s_region, ad::Var features);

// Concat[GAP, GMP, SAP 2x2x2] -> [10c].
ad::Var aggregate(ad::Var features);

ad::Var abstract(ad::Graph& g, const Abstractor& w, ad::Var aggregated);

struct RefineResult {
  ad::Var refined;  // g * S_visual + (1 - g) * S_text
  ad::Var gate;     // g
};

RefineResult gated_refine(ad::Graph& g, const RefineGate& w, ad::Var s_visual, ad::Var s_text);

// Which directions of the exchange run. Both on is the bidirectional mechanism.
struct InteractionMode {
  bool semantic_to_visual = true;  // off: A == 1
  bool visual_to_semantic = true;  // off: S never updates
};

struct RoundRecord {
  int round = 0;
  double delta_f = 0.0;  // ||F_r - F_{r-1}|| / ||F_{r-1}||
  double delta_s = 0.0;
  double quality = 0.0;       // cos(S_visual_r, S_r)
  double quality_gain = 0.0;  // quality_r - quality_{r-2} (quality_0 is the pre-loop value)
};

struct InteractionTrace {
  std::vector<RoundRecord> rounds;
  double initial_quality = 0.0;
  bool converged = false;
  std::string reason;  // "converged" | "max_rounds"

  std::size_t round() const noexcept { return rounds.size(); }
  std::vector<double> quality_history() const;
  std::string to_json() const;
};

// The stopping rule, applied to one round record.
bool meets_convergence(const RoundRecord& r, const BivaParams& p);

struct InteractResult {
  ad::Var features;  // F*
  ad::Var semantic;  // S*
  InteractionTrace trace;
  std::array<ad::Var, 3> last_attention;  // invalid when semantic_to_visual is off
  ad::Var last_gate;                      // invalid when visual_to_semantic is off
};

// Attention in each round is derived from the current S and applied to F0, so repeated rounds
// refine rather than compound the gating. Throws AnomalyError naming round and stage on any
// non-finite intermediate.
InteractResult interact(ad::Graph& g, const BivaWeights& w, ad::Var f0, ad::Var s_text, const BivaParams& params,
                        const InteractionMode& mode = {});

double relative_change(const Tensor& now, const Tensor& before);
double cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace msfa::biva
