#include "model/model_set.h"

#include <cstring>
#include <set>

#include "core/error.h"
#include "core/rng.h"

namespace nvs {

ModelSet::ModelSet(const RadianceConfig& cfg, uint64_t seed)
    : config(cfg),
      feature(cfg.d, hash_mix(seed, 0x66656174)),
      coarse(cfg, "coarse", hash_mix(seed, 0x636f6172)),
      fine(cfg, "fine", hash_mix(seed, 0x66696e65)) {}

std::vector<std::pair<std::string, Tensor>> ModelSet::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& p : feature.named_params()) out.push_back(p);
  for (auto& p : coarse.named_params()) out.push_back(p);
  for (auto& p : fine.named_params()) out.push_back(p);
  return out;
}

int64_t ModelSet::num_params() {
  int64_t n = 0;
  for (auto& p : named_params()) n += p.second.size();
  return n;
}

Checkpoint ModelSet::to_checkpoint(uint64_t step) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.config_fingerprint = fingerprint();
  for (auto& p : named_params()) ckpt.add(p.first, p.second);
  return ckpt;
}

void ModelSet::load(const Checkpoint& ckpt) {
  if (ckpt.config_fingerprint != fingerprint())
    throw FormatError("checkpoint config fingerprint mismatch (checkpoint " +
                      std::to_string(ckpt.config_fingerprint) + ", model " +
                      std::to_string(fingerprint()) + ")");
  auto params = named_params();
  std::set<std::string> known;
  for (auto& p : params) known.insert(p.first);
  for (const auto& t : ckpt.tensors) {
    // "opt." records carry optimizer state; the trainer restores those.
    if (t.first.rfind("opt.", 0) == 0) continue;
    if (!known.count(t.first))
      throw FormatError("checkpoint has unknown tensor '" + t.first + "'");
  }
  for (auto& p : params) {
    Tensor src = ckpt.require(p.first);
    if (src.shape() != p.second.shape())
      throw FormatError("checkpoint tensor '" + p.first + "' has wrong shape");
    std::memcpy(p.second.data(), src.data(),
                sizeof(float) * static_cast<size_t>(src.size()));
  }
}

}  // namespace nvs
