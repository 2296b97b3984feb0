#pragma once

#include <string>
#include <vector>

namespace percflow {

enum class RegularizerKind {
  kNone,
  kKlRef,
  kEntropyReg,
  kClipHigher,
  kClipCov,
  kKlCov,
  kPec,
  kPcvae,
};

enum class EntropySpace { kGeneration, kPerceptual };

std::string to_string(RegularizerKind k);
std::string to_string(EntropySpace s);
RegularizerKind regularizer_kind_from_string(const std::string& name);
EntropySpace entropy_space_from_string(const std::string& name);
const std::vector<std::string>& regularizer_tags();

// One tagged regularizer plus the base clip range. Fields not used by `kind`
// keep their defaults.
struct RegularizerSpec {
  RegularizerKind kind = RegularizerKind::kNone;
  double clip_eps = 0.2;
  double kl_weight = 0.001;                            // kl_ref
  EntropySpace entropy_space = EntropySpace::kGeneration;  // entropy_reg
  double entropy_weight = 0.05;
  double eps_low = 0.2;                                // clip_higher
  double eps_high = 0.3;
  double rate = 0.25;                                  // clip_cov, kl_cov
  double beta = 1.0;                                   // kl_cov
  double lambda = 0.05;                                // pec, pcvae
  std::string map_id = "mlp";                          // pec, pcvae, entropy_reg

  void validate() const;
  // Effective (eps_low, eps_high) of the surrogate.
  double surrogate_eps_low() const;
  double surrogate_eps_high() const;

  bool operator==(const RegularizerSpec&) const = default;
};

// "kind" or "kind:key=value,key=value", e.g. "pec:lambda=0.05,map=mlp".
// Unknown kinds list the valid tags; unknown keys list the kind's keys.
RegularizerSpec parse_regularizer(const std::string& text);
std::string format_regularizer(const RegularizerSpec& spec);

}  // namespace percflow
