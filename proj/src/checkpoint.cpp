#include "grm/checkpoint.hpp"

#include "byteio.hpp"

#include <json.hpp>

namespace grm {

namespace {

nlohmann::json arch_json(const Architecture& a) {
  return {{"task", std::string(task_name(a.task))},
          {"input_dim", a.input_dim},
          {"encoder_widths", a.encoder_widths},
          {"hidden", a.hidden},
          {"classes", a.classes},
          {"upsample", a.upsample},
          {"grid_h", a.grid_h},
          {"grid_w", a.grid_w}};
}

Architecture arch_from_json(const nlohmann::json& j) {
  Architecture a;
  a.task = parse_task(j.at("task").get<std::string>());
  a.input_dim = j.at("input_dim").get<int>();
  a.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  a.hidden = j.at("hidden").get<int>();
  a.classes = j.at("classes").get<int>();
  a.upsample = j.at("upsample").get<int>();
  a.grid_h = j.at("grid_h").get<int>();
  a.grid_w = j.at("grid_w").get<int>();
  a.validate();
  return a;
}

}  // namespace

std::vector<unsigned char> checkpoint_bytes(const ModelParams& params) {
  io::Bytes out{'G', 'R', 'M', 'C'};
  io::put_u32le(out, kCheckpointVersion);
  const std::string arch = arch_json(params.arch).dump();
  io::put_u64le(out, arch.size());
  out.insert(out.end(), arch.begin(), arch.end());
  auto put_matrix = [&out](const Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) io::put_f64le(out, m(r, c));
    }
  };
  for (const auto& l : params.layers) {
    put_matrix(l.weight);
    put_matrix(l.bias);
  }
  return out;
}

ModelParams parse_checkpoint(const std::vector<unsigned char>& bytes) {
  io::Reader in(bytes, "checkpoint");
  try {
    if (in.remaining() < 4 || in.text(4) != "GRMC") throw CheckpointError("bad magic");
    const auto version = in.u32le();
    if (version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                            " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const auto len = in.u64le();
    in.need(len);
    ModelParams params;
    try {
      params.arch = arch_from_json(nlohmann::json::parse(in.text(len)));
    } catch (const std::exception& e) {
      throw CheckpointError(std::string("bad architecture descriptor: ") + e.what());
    }
    for (auto [fan_in, fan_out] : params.arch.layer_shapes()) {
      Layer l{Matrix(fan_in, fan_out), Matrix(1, fan_out)};
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
        for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = in.f64le();
      }
      for (Eigen::Index c = 0; c < l.bias.cols(); ++c) l.bias(0, c) = in.f64le();
      params.layers.push_back(std::move(l));
    }
    if (in.remaining() != 0) {
      throw CheckpointError("checkpoint has " + std::to_string(in.remaining()) +
                            " trailing bytes");
    }
    return params;
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  io::write_atomic(path, checkpoint_bytes(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(io::read_file(path));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
}

}  // namespace grm
