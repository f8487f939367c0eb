#pragma once

// Named-tensor checkpoint container: magic, count, then per tensor
// (name, dims, little-endian float32 payload). Optimizer state rides along
// as tensors under an "opt/" prefix, model description under "meta/".

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spoofnet/autodiff.hpp"

namespace spoofnet::checkpoint {

struct Entry {
  std::vector<Eigen::Index> shape;
  ad::Array data;
};

using TensorMap = std::map<std::string, Entry>;

void save(const std::filesystem::path& path, const TensorMap& tensors,
          const std::string& meta_json = "");
TensorMap load(const std::filesystem::path& path, std::string* meta_json = nullptr);

// Convenience: pack/unpack a parameter list, buffers, and optimizer state.
TensorMap pack(const std::vector<ad::NamedParam>& params,
               const std::vector<std::pair<std::string, ad::Array*>>& buffers,
               const ad::AmsGrad* opt = nullptr);
void unpack(const TensorMap& tensors, std::vector<ad::NamedParam>& params,
            std::vector<std::pair<std::string, ad::Array*>>& buffers,
            ad::AmsGrad* opt = nullptr);

}  // namespace spoofnet::checkpoint
