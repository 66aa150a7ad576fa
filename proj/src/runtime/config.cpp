#include "mhcnn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mhcnn::runtime {
namespace {

using nlohmann::json;

// Reads typed fields out of one JSON object and rejects whatever is left.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "must be an object");
  }

  template <typename F>
  void optional(const std::string& key, F&& read) {
    seen_.insert(key);
    if (j_.contains(key)) read(j_.at(key), path_ + "." + key);
  }

  void size(const std::string& key, std::size_t& out) {
    optional(key, [&](const json& v, const std::string& p) { out = as_size(v, p); });
  }
  void u64(const std::string& key, std::uint64_t& out) {
    optional(key, [&](const json& v, const std::string& p) {
      if (!v.is_number_unsigned()) fail(p, "must be a non-negative integer");
      out = v.get<std::uint64_t>();
    });
  }
  void number(const std::string& key, double& out) {
    optional(key, [&](const json& v, const std::string& p) {
      if (!v.is_number()) fail(p, "must be a number");
      out = v.get<double>();
    });
  }
  void boolean(const std::string& key, bool& out) {
    optional(key, [&](const json& v, const std::string& p) {
      if (!v.is_boolean()) fail(p, "must be true or false");
      out = v.get<bool>();
    });
  }
  void string(const std::string& key, std::string& out) {
    optional(key, [&](const json& v, const std::string& p) {
      if (!v.is_string()) fail(p, "must be a string");
      out = v.get<std::string>();
    });
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.contains(key)) fail(path_ + "." + key, "unknown key");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& msg) {
    throw ConfigError("config: " + path + " " + msg);
  }

  static std::size_t as_size(const json& v, const std::string& p) {
    if (!v.is_number_unsigned()) fail(p, "must be a non-negative integer");
    return v.get<std::size_t>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_source(const json& j, const std::string& path, ImageSource& out) {
  Section s(j, path);
  std::string kind = "synthetic";
  s.string("kind", kind);
  if (kind == "synthetic") {
    out.kind = ImageSource::Kind::synthetic;
  } else if (kind == "folder") {
    out.kind = ImageSource::Kind::folder;
  } else if (kind == "paired") {
    out.kind = ImageSource::Kind::paired;
  } else {
    Section::fail(path + ".kind", "must be synthetic, folder or paired");
  }
  s.size("count", out.count);
  s.size("size", out.size);
  s.u64("seed", out.seed);
  s.string("path", out.path);
  s.finish();
}

json source_json(const ImageSource& src) {
  static const char* names[] = {"synthetic", "folder", "paired"};
  return json{{"kind", names[static_cast<int>(src.kind)]},
              {"count", src.count},
              {"size", src.size},
              {"seed", src.seed},
              {"path", src.path}};
}

void validate_source(const ImageSource& src, const char* what, bool allow_paired) {
  const std::string prefix = std::string("config: ") + what;
  switch (src.kind) {
    case ImageSource::Kind::synthetic:
      if (src.count == 0) throw ConfigError(prefix + ".count must be >= 1");
      if (src.size < 16) throw ConfigError(prefix + ".size must be >= 16");
      break;
    case ImageSource::Kind::paired:
      if (!allow_paired) throw ConfigError(prefix + ".kind paired is not supported here");
      [[fallthrough]];
    case ImageSource::Kind::folder:
      if (src.path.empty()) throw ConfigError(prefix + ".path is required");
      break;
  }
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: model: ") + e.what());
  }
  if (!(noise_sigma >= 0.0 && noise_sigma <= 255.0)) throw ConfigError("config: noise_sigma must be in [0, 255]");
  if (patch_size < 4 || patch_size % 4 != 0) throw ConfigError("config: patch_size must be a multiple of 4, >= 4");
  if (patch_stride == 0) throw ConfigError("config: patch_stride must be >= 1");
  if (patches_per_epoch < 2) throw ConfigError("config: patches_per_epoch must be >= 2");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("config: validation_fraction must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (!(lr > 0.0 && lr < 1.0)) throw ConfigError("config: optimizer.lr must be in (0, 1)");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0))
    throw ConfigError("config: optimizer.decay_factor must be in (0, 1]");
  if (decay_interval == 0) throw ConfigError("config: optimizer.decay_interval must be >= 1");
  validate_source(data, "data", true);
  validate_source(eval, "eval", false);
  if (data.kind == ImageSource::Kind::synthetic && data.size < patch_size)
    throw ConfigError("config: data.size must be >= patch_size");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
}

RunConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig c;
  Section s(root, "$");
  s.optional("model", [&](const json& j, const std::string& path) {
    Section m(j, path);
    m.size("width", c.model.width);
    m.size("heads", c.model.heads);
    m.optional("angles", [&](const json& a, const std::string& p) {
      if (!a.is_array()) Section::fail(p, "must be an array of quarter-turn counts");
      c.model.angles.clear();
      for (const auto& v : a) {
        if (!v.is_number_integer()) Section::fail(p, "entries must be integers");
        c.model.angles.push_back(v.get<int>());
      }
    });
    m.boolean("use_mpa", c.model.use_mpa);
    m.size("in_channels", c.model.in_channels);
    m.u64("seed", c.model.seed);
    m.finish();
  });
  s.number("noise_sigma", c.noise_sigma);
  s.size("patch_size", c.patch_size);
  s.size("patch_stride", c.patch_stride);
  s.size("patches_per_epoch", c.patches_per_epoch);
  s.number("validation_fraction", c.validation_fraction);
  s.size("batch_size", c.batch_size);
  s.size("epochs", c.epochs);
  s.size("max_iterations", c.max_iterations);
  s.optional("optimizer", [&](const json& j, const std::string& path) {
    Section o(j, path);
    o.number("lr", c.lr);
    o.number("decay_factor", c.decay_factor);
    o.size("decay_interval", c.decay_interval);
    o.finish();
  });
  s.optional("data", [&](const json& j, const std::string& path) { read_source(j, path, c.data); });
  s.optional("eval", [&](const json& j, const std::string& path) { read_source(j, path, c.eval); });
  s.u64("seed", c.seed);
  s.string("output_dir", c.output_dir);
  s.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"width", c.model.width},     {"heads", c.model.heads},
                {"angles", c.model.angles},   {"use_mpa", c.model.use_mpa},
                {"in_channels", c.model.in_channels}, {"seed", c.model.seed}};
  j["noise_sigma"] = c.noise_sigma;
  j["patch_size"] = c.patch_size;
  j["patch_stride"] = c.patch_stride;
  j["patches_per_epoch"] = c.patches_per_epoch;
  j["validation_fraction"] = c.validation_fraction;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["max_iterations"] = c.max_iterations;
  j["optimizer"] = {{"lr", c.lr}, {"decay_factor", c.decay_factor}, {"decay_interval", c.decay_interval}};
  j["data"] = source_json(c.data);
  j["eval"] = source_json(c.eval);
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

}  // namespace mhcnn::runtime
