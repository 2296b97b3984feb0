#include "percflow/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "percflow/errors.hpp"

namespace percflow {

namespace fs = std::filesystem;

nlohmann::json mlp_to_json(const Mlp& net) {
  nlohmann::json j;
  j["layer_sizes"] = net.layer_sizes;
  j["activation"] = to_string(net.activation);
  j["shapes"] = nlohmann::json::array();
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (int l = 0; l < net.num_layers(); ++l) {
    const auto& w = net.weights[l];
    j["shapes"].push_back({w.rows(), w.cols()});
    std::vector<double> flat;
    flat.reserve(w.size());
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    j["weights"].push_back(flat);
    j["biases"].push_back(std::vector<double>(
        net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
  }
  return j;
}

Mlp mlp_from_json(const nlohmann::json& j) {
  try {
    Mlp net = Mlp::zeros(j.at("layer_sizes").get<std::vector<int>>(),
                         activation_from_string(j.at("activation")));
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (static_cast<int>(weights.size()) != net.num_layers() ||
        static_cast<int>(biases.size()) != net.num_layers()) {
      throw IoError("layer count does not match the shape manifest");
    }
    for (int l = 0; l < net.num_layers(); ++l) {
      const auto w = weights[l].get<std::vector<double>>();
      const auto b = biases[l].get<std::vector<double>>();
      auto& W = net.weights[l];
      if (static_cast<Eigen::Index>(w.size()) != W.size() ||
          static_cast<Eigen::Index>(b.size()) != net.biases[l].size()) {
        throw IoError("layer " + std::to_string(l) +
                      " parameter count does not match the shape manifest");
      }
      std::size_t k = 0;
      for (Eigen::Index r = 0; r < W.rows(); ++r)
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = w[k++];
      for (std::size_t r = 0; r < b.size(); ++r) net.biases[l][r] = b[r];
    }
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed network parameters: ") + e.what());
  }
}

nlohmann::json model_to_json(const VelocityModel& model,
                             const std::vector<std::string>& condition_names) {
  nlohmann::json j;
  j["format"] = "percflow-velocity-model";
  j["version"] = 1;
  j["dim"] = model.dim;
  j["num_conditions"] = model.num_conditions;
  j["time_frequencies"] = model.time_frequencies;
  j["conditions"] = condition_names;
  j["net"] = mlp_to_json(model.net);
  return j;
}

VelocityModel model_from_json(const nlohmann::json& j,
                              std::vector<std::string>* condition_names) {
  try {
    if (j.at("format") != "percflow-velocity-model") {
      throw IoError("not a velocity model checkpoint");
    }
    VelocityModel m;
    m.dim = j.at("dim");
    m.num_conditions = j.at("num_conditions");
    m.time_frequencies = j.at("time_frequencies");
    m.net = mlp_from_json(j.at("net"));
    if (m.net.input_dim() != m.input_dim() || m.net.output_dim() != m.dim) {
      throw IoError("network shape does not match the model header");
    }
    if (condition_names != nullptr) {
      *condition_names = j.at("conditions").get<std::vector<std::string>>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ValueError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_checkpoint(const fs::path& path, const VelocityModel& model,
                     const std::vector<std::string>& condition_names) {
  write_file_atomic(path, model_to_json(model, condition_names).dump(1) + "\n");
}

VelocityModel load_checkpoint(const fs::path& path,
                              std::vector<std::string>* condition_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  try {
    return model_from_json(nlohmann::json::parse(in), condition_names);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupted checkpoint " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace percflow
