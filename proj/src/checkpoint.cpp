// Copyright 2026 The IBKit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <fstream>

#include "ibkit/adapter.hpp"
#include "ibkit/errors.hpp"

namespace ibkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr int kCheckpointSchema = 1;
constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "params.ibmat";
}  // namespace

void save_checkpoint(const fs::path& dir, std::span<const ParamSlot* const> slots,
                     const json& metadata) {
  fs::create_directories(dir);
  json entries = json::array();
  std::ofstream blob(dir / kBlob, std::ios::binary | std::ios::trunc);
  if (!blob) throw ValueError("cannot write checkpoint blob in '" + dir.string() + "'");
  std::size_t offset = 0;
  for (const ParamSlot* s : slots) {
    const Matrix& v = s->value();
    write_matrix(blob, v);
    entries.push_back({{"name", s->name()},
                       {"rows", v.rows()},
                       {"cols", v.cols()},
                       {"offset", offset},
                       {"bytes", encoded_size(v)}});
    offset += encoded_size(v);
  }
  json manifest = {{"schema_version", kCheckpointSchema},
                   {"blob", kBlob},
                   {"metadata", metadata},
                   {"slots", entries}};
  std::ofstream out(dir / kManifest, std::ios::trunc);
  if (!out) throw ValueError("cannot write checkpoint manifest in '" + dir.string() + "'");
  out << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / kManifest);
  if (!in) throw ValueError("missing checkpoint manifest '" + (dir / kManifest).string() + "'");
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw ValueError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("schema_version", 0) != kCheckpointSchema) {
    throw ValueError("unsupported checkpoint schema version");
  }
  std::ifstream blob(dir / manifest.value("blob", std::string(kBlob)), std::ios::binary);
  if (!blob) throw ValueError("missing checkpoint blob in '" + dir.string() + "'");

  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", json::object());
  for (const json& e : manifest.at("slots")) {
    blob.seekg(static_cast<std::streamoff>(e.at("offset").get<std::size_t>()));
    Matrix m = read_matrix(blob);
    if (m.rows() != e.at("rows").get<std::size_t>() || m.cols() != e.at("cols").get<std::size_t>()) {
      throw ValueError("checkpoint slot '" + e.at("name").get<std::string>() +
                       "' disagrees with its manifest shape");
    }
    ckpt.tensors.emplace(e.at("name").get<std::string>(), std::move(m));
  }
  return ckpt;
}

void restore_slots(const Checkpoint& ckpt, std::span<ParamSlot* const> slots) {
  for (ParamSlot* s : slots) {
    auto it = ckpt.tensors.find(s->name());
    if (it == ckpt.tensors.end()) throw ValueError("checkpoint lacks slot '" + s->name() + "'");
    s->assign(it->second);
    s->zero_grad();
  }
}

json to_json(const AdapterConfig& c) {
  return {{"dim", c.dim},           {"heads", c.heads},       {"hidden", c.hidden},
          {"lambda_init", c.lambda_init}, {"p_drop", c.p_drop}, {"tau_init", c.tau_init},
          {"bias_init", c.bias_init}, {"init_std", c.init_std}, {"kind", to_string(c.kind)}};
}

AdapterConfig adapter_config_from_json(const json& j) {
  AdapterConfig c;
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  c.lambda_init = j.value("lambda_init", c.lambda_init);
  c.p_drop = j.value("p_drop", c.p_drop);
  c.tau_init = j.value("tau_init", c.tau_init);
  c.bias_init = j.value("bias_init", c.bias_init);
  c.init_std = j.value("init_std", c.init_std);
  c.kind = parse_projector_kind(j.value("kind", to_string(c.kind)));
  return c;
}

}  // namespace ibkit
