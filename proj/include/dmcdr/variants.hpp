#pragma once

// Pipeline wiring for the full model, its ablations, and the six
// diffusion-based comparison variants. Every pipeline shares the preference
// encoder, the schedule and the denoiser family; they differ only in which
// vectors make up the diffused state, which blocks receive noise, how the
// history signal conditions the denoiser, and how the final state is scored.

#include <string>
#include <vector>

#include "dmcdr/error.hpp"

namespace dmcdr {

// Blocks of the diffused state, in order.
enum class StateLayout {
  User,         // [u]
  UserHistory,  // [u | h]
  HistoryUser,  // [h | u]
  History,      // [h]
};

// Which blocks of the state are corrupted by the forward process.
enum class NoiseTarget { All, FirstBlock, };

enum class Conditioning {
  Guided,  // h with classifier-free masking, guided at inference
  Null,    // the null token, always
  None,    // no conditioning input
};

enum class Scoring {
  Direct,            // state . v
  Project,           // (P state) . v
  ProjectWithHistory,  // (P [state | h]) . v
  ProjectWithUser,   // (P [state | u]) . v
};

struct PipelineSpec {
  std::string name = "dmcdr";
  int variant_id = 0;  // 1..6 for comparison variants, 0 otherwise
  bool diffusion = true;
  bool use_transformer = true;
  StateLayout layout = StateLayout::User;
  NoiseTarget noise = NoiseTarget::All;
  Conditioning conditioning = Conditioning::Guided;
  Scoring scoring = Scoring::Direct;

  bool needs_history() const {
    return conditioning == Conditioning::Guided || layout != StateLayout::User ||
           scoring == Scoring::ProjectWithHistory;
  }
  bool has_null_token() const { return conditioning != Conditioning::None; }
  bool has_projection() const { return scoring != Scoring::Direct; }
  int state_blocks() const {
    return layout == StateLayout::User || layout == StateLayout::History ? 1 : 2;
  }
  int state_dim(int d1) const { return state_blocks() * d1; }
  int cond_dim(int d1) const { return conditioning == Conditioning::None ? 0 : d1; }
  bool noised_block(int block) const { return noise == NoiseTarget::All || block == 0; }
};

// Full model: guided reverse process over u.
inline PipelineSpec dmcdr_pipeline() { return {}; }

// Encoder bypassed: h is the mean of raw history item embeddings.
inline PipelineSpec without_transformer() {
  PipelineSpec p;
  p.name = "wo_tf";
  p.use_transformer = false;
  return p;
}

// Guidance removed: the denoiser always sees the null token.
inline PipelineSpec without_guidance() {
  PipelineSpec p;
  p.name = "wo_gs";
  p.conditioning = Conditioning::Null;
  return p;
}

// Diffusion removed: score with P [u | h].
inline PipelineSpec without_diffusion() {
  PipelineSpec p;
  p.name = "wo_dm";
  p.diffusion = false;
  p.conditioning = Conditioning::None;
  p.scoring = Scoring::ProjectWithHistory;
  return p;
}

// Comparison variants 1..6.
inline PipelineSpec build_variant(int id) {
  PipelineSpec p;
  p.variant_id = id;
  p.name = "variant" + std::to_string(id);
  p.conditioning = Conditioning::None;
  switch (id) {
    case 1:  // unguided diffusion on u (same wiring as wo_gs)
      p.conditioning = Conditioning::Null;
      break;
    case 2:  // diffuse [u | h] end to end
      p.layout = StateLayout::UserHistory;
      p.scoring = Scoring::Project;
      break;
    case 3:  // reverse from [u_t | h]; only u is noised
      p.layout = StateLayout::UserHistory;
      p.noise = NoiseTarget::FirstBlock;
      p.scoring = Scoring::Project;
      break;
    case 4:  // diffuse u, score with P [u0_hat | h]
      p.scoring = Scoring::ProjectWithHistory;
      break;
    case 5:  // forward-diffuse h, reverse from [h_t | u]
      p.layout = StateLayout::HistoryUser;
      p.noise = NoiseTarget::FirstBlock;
      p.scoring = Scoring::Project;
      break;
    case 6:  // diffuse h alone, score with P [h0_hat | u]
      p.layout = StateLayout::History;
      p.scoring = Scoring::ProjectWithUser;
      break;
    default:
      throw ConfigError("unknown variant id " + std::to_string(id) + " (expected 1..6)");
  }
  return p;
}

// Resolve a pipeline by name: dmcdr, wo_tf, wo_gs, wo_dm, variant1..variant6
// (or the bare digits 1..6).
inline PipelineSpec pipeline_by_name(const std::string& name) {
  if (name == "dmcdr") return dmcdr_pipeline();
  if (name == "wo_tf") return without_transformer();
  if (name == "wo_gs") return without_guidance();
  if (name == "wo_dm") return without_diffusion();
  std::string digits = name;
  if (digits.rfind("variant", 0) == 0) digits = digits.substr(7);
  if (digits.size() == 1 && digits[0] >= '1' && digits[0] <= '6') return build_variant(digits[0] - '0');
  throw ConfigError("unknown model '" + name +
                    "' (expected dmcdr, wo_tf, wo_gs, wo_dm or variant1..variant6)");
}

inline std::vector<std::string> variant_names() {
  return {"variant1", "variant2", "variant3", "variant4", "variant5", "variant6"};
}

// Noise on h is only reversible for small eta; flag risky settings.
inline std::vector<std::string> lint(const PipelineSpec& p, double eta) {
  std::vector<std::string> warnings;
  const bool noises_history =
      p.diffusion && (p.layout == StateLayout::History ||
                      (p.layout == StateLayout::HistoryUser) ||
                      (p.layout == StateLayout::UserHistory && p.noise == NoiseTarget::All));
  if (noises_history && eta > 0.5) {
    warnings.push_back(p.name + ": eta = " + std::to_string(eta) +
                       " adds heavy noise to the history signal");
  }
  return warnings;
}

}  // namespace dmcdr
