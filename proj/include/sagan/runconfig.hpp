// Run configuration: a flat key=value text file covering every tunable
// default in the pipeline, model, trainer, and evaluation stages, with a
// stable content digest that is stamped into every output. Also the disk
// formats for preprocessed domains and fitted feature spaces.
#pragma once

#include <cctype>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sagan/checkpoint.hpp"
#include "sagan/common.hpp"
#include "sagan/domain.hpp"
#include "sagan/evaluation.hpp"
#include "sagan/pipeline.hpp"
#include "sagan/trainer.hpp"

namespace sagan {

// ===========================================================================
// Run configuration
// ===========================================================================

struct RunConfig {
  double sample_rate_hz = 30.0;  // used when the input carries no rate
  AssembleConfig assemble;       // window_seconds, overlap, pca_dim, pca_method
  SaganConfig sagan;             // model and trainer knobs; feature_dim and
                                 // n_classes are always taken from the data
  KnnPcaConfig knn;
  std::size_t w1_subsample = 256;
  std::size_t w1_repeats = 8;

  void validate() const {
    require<ConfigError>(sample_rate_hz > 0, "config: sample_rate_hz must be positive");
    require<ConfigError>(assemble.window_seconds > 0,
                         "config: window_seconds must be positive");
    require<ConfigError>(assemble.overlap >= 0 && assemble.overlap < 1,
                         "config: overlap must lie in [0, 1)");
    require<ConfigError>(assemble.pca_dim >= 1, "config: pca_dim must be >= 1");
    require<ConfigError>(w1_subsample >= 1 && w1_repeats >= 1,
                         "config: w1_subsample and w1_repeats must be >= 1");
    try {
      knn.validate();
      sagan.validate();
    } catch (const SaganError& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

inline std::string pca_method_name(PcaMethod m) {
  switch (m) {
    case PcaMethod::Auto: return "auto";
    case PcaMethod::Dense: return "dense";
    case PcaMethod::Subspace: return "subspace";
  }
  throw ConfigError("unknown pca method");
}

inline PcaMethod pca_method_from_name(const std::string& name) {
  if (name == "auto") return PcaMethod::Auto;
  if (name == "dense") return PcaMethod::Dense;
  if (name == "subspace") return PcaMethod::Subspace;
  throw ConfigError("config: unknown pca_method '" + name + "'");
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline double parse_config_double(const std::string& value,
                                  const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    require<ConfigError>(used == value.size(), "trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": bad number '" + value + "'");
  }
}

inline std::size_t parse_config_size(const std::string& value,
                                     const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    require<ConfigError>(used == value.size() && v >= 0, "bad value");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(where + ": bad non-negative integer '" + value + "'");
  }
}

inline std::uint64_t parse_config_u64(const std::string& value,
                                      const std::string& where) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    require<ConfigError>(used == value.size(), "bad value");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(where + ": bad unsigned integer '" + value + "'");
  }
}

using ConfigHandler =
    std::function<void(RunConfig&, const std::string& value,
                       const std::string& where)>;

inline const std::map<std::string, ConfigHandler>& config_handlers() {
  static const std::map<std::string, ConfigHandler> handlers = [] {
    std::map<std::string, ConfigHandler> h;
    h["sample_rate_hz"] = [](RunConfig& c, const std::string& v,
                             const std::string& w) {
      c.sample_rate_hz = parse_config_double(v, w);
    };
    h["window_seconds"] = [](RunConfig& c, const std::string& v,
                             const std::string& w) {
      c.assemble.window_seconds = parse_config_double(v, w);
    };
    h["overlap"] = [](RunConfig& c, const std::string& v,
                      const std::string& w) {
      c.assemble.overlap = parse_config_double(v, w);
    };
    h["pca_dim"] = [](RunConfig& c, const std::string& v,
                      const std::string& w) {
      c.assemble.pca_dim = parse_config_size(v, w);
    };
    h["pca_method"] = [](RunConfig& c, const std::string& v,
                         const std::string&) {
      c.assemble.pca_method = pca_method_from_name(v);
    };
    h["lambda_adv"] = [](RunConfig& c, const std::string& v,
                         const std::string& w) {
      c.sagan.lambda_adv = parse_config_double(v, w);
    };
    h["lambda_cls"] = [](RunConfig& c, const std::string& v,
                         const std::string& w) {
      c.sagan.lambda_cls = parse_config_double(v, w);
    };
    h["batch_m"] = [](RunConfig& c, const std::string& v,
                      const std::string& w) {
      c.sagan.batch_m = parse_config_size(v, w);
    };
    h["noise_sigma"] = [](RunConfig& c, const std::string& v,
                          const std::string& w) {
      c.sagan.noise_sigma = parse_config_double(v, w);
    };
    h["d_f"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.sagan.d_f = parse_config_size(v, w);
    };
    h["n_blocks"] = [](RunConfig& c, const std::string& v,
                       const std::string& w) {
      c.sagan.n_blocks = parse_config_size(v, w);
    };
    h["g_f"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.sagan.g_f = parse_config_size(v, w);
    };
    h["c_f"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.sagan.c_f = parse_config_size(v, w);
    };
    h["epochs"] = [](RunConfig& c, const std::string& v,
                     const std::string& w) {
      c.sagan.epochs = parse_config_size(v, w);
    };
    h["seed"] = [](RunConfig& c, const std::string& v, const std::string& w) {
      c.sagan.seed = parse_config_u64(v, w);
    };
    struct OptSlot {
      const char* prefix;
      OptimizerConfig SaganConfig::* member;
    };
    static const OptSlot slots[] = {{"d", &SaganConfig::d_opt},
                                    {"c", &SaganConfig::c_opt},
                                    {"g", &SaganConfig::g_opt}};
    for (const OptSlot& slot : slots) {
      const std::string p = slot.prefix;
      const auto member = slot.member;
      h[p + "_optimizer"] = [member](RunConfig& c, const std::string& v,
                                     const std::string&) {
        (c.sagan.*member).kind = optimizer_kind_from_name(v);
      };
      h[p + "_learning_rate"] = [member](RunConfig& c, const std::string& v,
                                         const std::string& w) {
        (c.sagan.*member).learning_rate = parse_config_double(v, w);
      };
      h[p + "_momentum"] = [member](RunConfig& c, const std::string& v,
                                    const std::string& w) {
        (c.sagan.*member).momentum = parse_config_double(v, w);
      };
      h[p + "_beta1"] = [member](RunConfig& c, const std::string& v,
                                 const std::string& w) {
        (c.sagan.*member).beta1 = parse_config_double(v, w);
      };
      h[p + "_beta2"] = [member](RunConfig& c, const std::string& v,
                                 const std::string& w) {
        (c.sagan.*member).beta2 = parse_config_double(v, w);
      };
      h[p + "_epsilon"] = [member](RunConfig& c, const std::string& v,
                                   const std::string& w) {
        (c.sagan.*member).epsilon = parse_config_double(v, w);
      };
    }
    h["knn_neighbors"] = [](RunConfig& c, const std::string& v,
                            const std::string& w) {
      c.knn.k_neighbors = static_cast<int>(parse_config_size(v, w));
    };
    h["knn_variance_fraction"] = [](RunConfig& c, const std::string& v,
                                    const std::string& w) {
      c.knn.variance_fraction = parse_config_double(v, w);
    };
    h["w1_subsample"] = [](RunConfig& c, const std::string& v,
                           const std::string& w) {
      c.w1_subsample = parse_config_size(v, w);
    };
    h["w1_repeats"] = [](RunConfig& c, const std::string& v,
                         const std::string& w) {
      c.w1_repeats = parse_config_size(v, w);
    };
    return h;
  }();
  return handlers;
}

}  // namespace detail

// Every key is optional; missing keys keep their defaults. Unknown keys,
// duplicates, and malformed values are rejected with the offending line.
inline RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  const auto& handlers = detail::config_handlers();
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = "config line " + std::to_string(line_no);
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    require<ConfigError>(eq != std::string::npos,
                         where + ": expected key = value, got '" + body + "'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    require<ConfigError>(!key.empty() && !value.empty(),
                         where + ": empty key or value");
    const auto it = handlers.find(key);
    require<ConfigError>(it != handlers.end(),
                         where + ": unknown key '" + key + "'");
    const auto prev = seen.find(key);
    if (prev != seen.end())
      throw ConfigError(where + ": duplicate key '" + key +
                        "' (first set on line " +
                        std::to_string(prev->second) + ")");
    seen[key] = line_no;
    it->second(cfg, value, where);
  }
  cfg.validate();
  return cfg;
}

// Canonical rendering: every key in a fixed order. parse(render(c)) == c,
// and the digest below hashes exactly this text.
inline std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "sample_rate_hz = " << format_double(cfg.sample_rate_hz) << "\n";
  out << "window_seconds = " << format_double(cfg.assemble.window_seconds)
      << "\n";
  out << "overlap = " << format_double(cfg.assemble.overlap) << "\n";
  out << "pca_dim = " << cfg.assemble.pca_dim << "\n";
  out << "pca_method = " << pca_method_name(cfg.assemble.pca_method) << "\n";
  out << "lambda_adv = " << format_double(cfg.sagan.lambda_adv) << "\n";
  out << "lambda_cls = " << format_double(cfg.sagan.lambda_cls) << "\n";
  out << "batch_m = " << cfg.sagan.batch_m << "\n";
  out << "noise_sigma = " << format_double(cfg.sagan.noise_sigma) << "\n";
  out << "d_f = " << cfg.sagan.d_f << "\n";
  out << "n_blocks = " << cfg.sagan.n_blocks << "\n";
  out << "g_f = " << cfg.sagan.g_f << "\n";
  out << "c_f = " << cfg.sagan.c_f << "\n";
  out << "epochs = " << cfg.sagan.epochs << "\n";
  out << "seed = " << cfg.sagan.seed << "\n";
  const struct {
    const char* prefix;
    const OptimizerConfig* opt;
  } slots[] = {{"d", &cfg.sagan.d_opt},
               {"c", &cfg.sagan.c_opt},
               {"g", &cfg.sagan.g_opt}};
  for (const auto& slot : slots) {
    const std::string p = slot.prefix;
    out << p << "_optimizer = " << optimizer_kind_name(slot.opt->kind) << "\n";
    out << p << "_learning_rate = " << format_double(slot.opt->learning_rate)
        << "\n";
    out << p << "_momentum = " << format_double(slot.opt->momentum) << "\n";
    out << p << "_beta1 = " << format_double(slot.opt->beta1) << "\n";
    out << p << "_beta2 = " << format_double(slot.opt->beta2) << "\n";
    out << p << "_epsilon = " << format_double(slot.opt->epsilon) << "\n";
  }
  out << "knn_neighbors = " << cfg.knn.k_neighbors << "\n";
  out << "knn_variance_fraction = "
      << format_double(cfg.knn.variance_fraction) << "\n";
  out << "w1_subsample = " << cfg.w1_subsample << "\n";
  out << "w1_repeats = " << cfg.w1_repeats << "\n";
  return out.str();
}

inline std::string run_config_digest(const RunConfig& cfg) {
  return hex64(fnv1a64(render_run_config(cfg)));
}

inline RunConfig load_run_config(const std::string& path) {
  try {
    return parse_run_config(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ===========================================================================
// Persisted domains and feature spaces
// ===========================================================================

inline DomainRole role_from_name(const std::string& name) {
  if (name == "source") return DomainRole::Source;
  if (name == "target") return DomainRole::Target;
  if (name == "validation") return DomainRole::Validation;
  if (name == "test") return DomainRole::Test;
  throw ConfigError("unknown domain role '" + name + "'");
}

// Binary container holding the window matrix and labels, beside a JSON
// manifest at path + ".json" carrying identity, config digest, and seed.
inline void save_domain(const std::string& path, const Domain& domain,
                        const std::string& config_digest, std::uint64_t seed) {
  domain.validate();
  require<IoError>(!domain.features.empty(), "save_domain: empty domain");
  CheckpointContents contents;
  Tensor features(Shape{domain.size(), domain.dim()});
  features.data() = domain.features.values;
  contents["features"] = std::move(features);
  Tensor labels(Shape{domain.size()});
  for (std::size_t i = 0; i < domain.size(); ++i)
    labels.data()[i] = domain.labels.empty()
                           ? static_cast<double>(kNullLabel)
                           : static_cast<double>(domain.labels[i]);
  contents["labels"] = std::move(labels);
  save_checkpoint(path, contents);

  nlohmann::json j;
  j["subject"] = domain.subject_id;
  j["role"] = domain_role_name(domain.role);
  j["windows"] = domain.size();
  j["dim"] = domain.dim();
  j["labeled"] = !domain.labels.empty();
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  atomic_write_file(path + ".json", j.dump(2) + "\n");
}

struct LoadedDomain {
  Domain domain;
  std::string config_digest;
  std::uint64_t seed = 0;
};

inline LoadedDomain load_domain(const std::string& path) {
  CheckpointContents contents = load_checkpoint(path);
  require<IoError>(contents.count("features") && contents.count("labels"),
                   "domain " + path + ": missing features or labels");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path + ".json"));
    LoadedDomain out;
    out.domain.subject_id = j.at("subject").get<std::string>();
    out.domain.role = role_from_name(j.at("role").get<std::string>());
    out.config_digest = j.at("config_digest").get<std::string>();
    out.seed = j.at("seed").get<std::uint64_t>();
    const Tensor& features = contents.at("features");
    require<IoError>(features.shape().size() == 2,
                     "domain " + path + ": features must be rank 2");
    out.domain.features = Matrix(features.dim(0), features.dim(1));
    out.domain.features.values = features.data();
    if (j.at("labeled").get<bool>()) {
      const Tensor& labels = contents.at("labels");
      require<IoError>(labels.shape().size() == 1 &&
                           labels.dim(0) == features.dim(0),
                       "domain " + path + ": labels do not match features");
      out.domain.labels.resize(labels.dim(0));
      for (std::size_t i = 0; i < labels.dim(0); ++i)
        out.domain.labels[i] = static_cast<int>(labels.data()[i]);
    }
    require<IoError>(j.at("windows").get<std::size_t>() == out.domain.size() &&
                         j.at("dim").get<std::size_t>() == out.domain.dim(),
                     "domain " + path + ": manifest disagrees with contents");
    out.domain.validate();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("domain " + path + ": malformed manifest: " + e.what());
  }
}

inline void save_feature_space(const std::string& path,
                               const FeatureSpace& space,
                               const std::string& config_digest,
                               std::uint64_t seed) {
  require<IoError>(space.k() >= 1 && space.d_raw() >= 1,
                   "save_feature_space: empty space");
  CheckpointContents contents;
  Tensor mean(Shape{space.d_raw()});
  mean.data() = space.mean;
  contents["mean"] = std::move(mean);
  Tensor components(Shape{space.k(), space.d_raw()});
  components.data() = space.components.values;
  contents["components"] = std::move(components);
  Tensor variance(Shape{space.k()});
  variance.data() = space.explained_variance;
  contents["explained_variance"] = std::move(variance);
  save_checkpoint(path, contents);

  nlohmann::json j;
  j["k"] = space.k();
  j["d_raw"] = space.d_raw();
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  atomic_write_file(path + ".json", j.dump(2) + "\n");
}

inline FeatureSpace load_feature_space(const std::string& path) {
  CheckpointContents contents = load_checkpoint(path);
  for (const char* key : {"mean", "components", "explained_variance"})
    require<IoError>(contents.count(key),
                     "feature space " + path + ": missing " + key);
  FeatureSpace space;
  const Tensor& mean = contents.at("mean");
  const Tensor& components = contents.at("components");
  const Tensor& variance = contents.at("explained_variance");
  require<IoError>(mean.shape().size() == 1 && components.shape().size() == 2 &&
                       variance.shape().size() == 1 &&
                       components.dim(1) == mean.dim(0) &&
                       variance.dim(0) == components.dim(0),
                   "feature space " + path + ": inconsistent shapes");
  space.mean = mean.data();
  space.components = Matrix(components.dim(0), components.dim(1));
  space.components.values = components.data();
  space.explained_variance = variance.data();
  return space;
}

}  // namespace sagan
