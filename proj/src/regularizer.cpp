#include "percflow/regularizer.hpp"

#include <algorithm>
#include <charconv>
#include <map>

#include "percflow/csv.hpp"
#include "percflow/errors.hpp"

namespace percflow {

const std::vector<std::string>& regularizer_tags() {
  static const std::vector<std::string> tags{
      "none", "kl_ref", "entropy_reg", "clip_higher",
      "clip_cov", "kl_cov", "pec", "pcvae"};
  return tags;
}

std::string to_string(RegularizerKind k) {
  return regularizer_tags().at(static_cast<std::size_t>(k));
}

std::string to_string(EntropySpace s) {
  return s == EntropySpace::kGeneration ? "generation" : "perceptual";
}

RegularizerKind regularizer_kind_from_string(const std::string& name) {
  const auto& tags = regularizer_tags();
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == name) return static_cast<RegularizerKind>(i);
  }
  std::string valid;
  for (const auto& t : tags) valid += (valid.empty() ? "" : ", ") + t;
  throw ValueError("unknown regularizer '" + name + "'; valid tags: {" + valid + "}");
}

EntropySpace entropy_space_from_string(const std::string& name) {
  if (name == "generation") return EntropySpace::kGeneration;
  if (name == "perceptual") return EntropySpace::kPerceptual;
  throw ValueError("unknown entropy space '" + name +
                   "' (expected generation or perceptual)");
}

void RegularizerSpec::validate() const {
  const auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_unit(clip_eps)) throw ValueError("clip_eps must lie in (0, 1)");
  switch (kind) {
    case RegularizerKind::kNone: break;
    case RegularizerKind::kKlRef:
      if (!(kl_weight >= 0.0)) throw ValueError("kl_ref weight must be >= 0");
      break;
    case RegularizerKind::kEntropyReg:
      if (!(entropy_weight >= 0.0)) throw ValueError("entropy weight must be >= 0");
      break;
    case RegularizerKind::kClipHigher:
      if (!in_unit(eps_low) || !in_unit(eps_high)) {
        throw ValueError("clip_higher bounds must lie in (0, 1)");
      }
      break;
    case RegularizerKind::kClipCov:
    case RegularizerKind::kKlCov:
      if (!in_unit(rate)) throw ValueError("rate must lie in (0, 1)");
      if (!(beta >= 0.0)) throw ValueError("beta must be >= 0");
      break;
    case RegularizerKind::kPec:
    case RegularizerKind::kPcvae:
      if (!(lambda >= 0.0)) throw ValueError("lambda must be >= 0");
      break;
  }
}

double RegularizerSpec::surrogate_eps_low() const {
  return kind == RegularizerKind::kClipHigher ? eps_low : clip_eps;
}

double RegularizerSpec::surrogate_eps_high() const {
  return kind == RegularizerKind::kClipHigher ? eps_high : clip_eps;
}

namespace {

double parse_number(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ValueError("regularizer key '" + key + "' expects a number, got '" +
                     text + "'");
  }
  return v;
}

// Keys accepted by each kind; "clip" (the base surrogate range) is always
// accepted.
const std::map<RegularizerKind, std::vector<std::string>>& kind_keys() {
  static const std::map<RegularizerKind, std::vector<std::string>> keys{
      {RegularizerKind::kNone, {}},
      {RegularizerKind::kKlRef, {"weight"}},
      {RegularizerKind::kEntropyReg, {"space", "weight", "map"}},
      {RegularizerKind::kClipHigher, {"eps_low", "eps_high"}},
      {RegularizerKind::kClipCov, {"rate"}},
      {RegularizerKind::kKlCov, {"rate", "beta"}},
      {RegularizerKind::kPec, {"lambda", "map"}},
      {RegularizerKind::kPcvae, {"lambda", "map"}},
  };
  return keys;
}

}  // namespace

RegularizerSpec parse_regularizer(const std::string& text) {
  const auto colon = text.find(':');
  RegularizerSpec spec;
  spec.kind = regularizer_kind_from_string(text.substr(0, colon));
  bool eps_high_set = false;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      const auto comma = rest.find(',', pos);
      const std::string item =
          rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      pos = comma == std::string::npos ? rest.size() + 1 : comma + 1;
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string::npos) {
        throw ValueError("regularizer option '" + item + "' is not key=value");
      }
      const std::string key = item.substr(0, eq);
      const std::string val = item.substr(eq + 1);
      const auto& allowed = kind_keys().at(spec.kind);
      const bool known = key == "clip" ||
                         std::find(allowed.begin(), allowed.end(), key) != allowed.end();
      if (!known) {
        std::string valid = "clip";
        for (const auto& k : allowed) valid += ", " + k;
        throw ValueError("unknown key '" + key + "' for " + to_string(spec.kind) +
                         " (valid: " + valid + ")");
      }
      if (key == "clip") spec.clip_eps = parse_number(key, val);
      else if (key == "map") spec.map_id = val;
      else if (key == "space") spec.entropy_space = entropy_space_from_string(val);
      else if (key == "weight") {
        (spec.kind == RegularizerKind::kKlRef ? spec.kl_weight : spec.entropy_weight) =
            parse_number(key, val);
      } else if (key == "eps_low") spec.eps_low = parse_number(key, val);
      else if (key == "eps_high") {
        spec.eps_high = parse_number(key, val);
        eps_high_set = true;
      } else if (key == "rate") spec.rate = parse_number(key, val);
      else if (key == "beta") spec.beta = parse_number(key, val);
      else if (key == "lambda") spec.lambda = parse_number(key, val);
    }
  }
  if (spec.kind == RegularizerKind::kClipHigher && !eps_high_set) {
    spec.eps_high = spec.eps_low + 0.1;
  }
  spec.validate();
  return spec;
}

std::string format_regularizer(const RegularizerSpec& spec) {
  std::string out = to_string(spec.kind) + ":clip=" + format_double(spec.clip_eps);
  const auto add = [&](const std::string& k, const std::string& v) {
    out += "," + k + "=" + v;
  };
  switch (spec.kind) {
    case RegularizerKind::kNone: break;
    case RegularizerKind::kKlRef: add("weight", format_double(spec.kl_weight)); break;
    case RegularizerKind::kEntropyReg:
      add("space", to_string(spec.entropy_space));
      add("weight", format_double(spec.entropy_weight));
      add("map", spec.map_id);
      break;
    case RegularizerKind::kClipHigher:
      add("eps_low", format_double(spec.eps_low));
      add("eps_high", format_double(spec.eps_high));
      break;
    case RegularizerKind::kClipCov: add("rate", format_double(spec.rate)); break;
    case RegularizerKind::kKlCov:
      add("rate", format_double(spec.rate));
      add("beta", format_double(spec.beta));
      break;
    case RegularizerKind::kPec:
    case RegularizerKind::kPcvae:
      add("lambda", format_double(spec.lambda));
      add("map", spec.map_id);
      break;
  }
  return out;
}

}  // namespace percflow
