#include "spoofnet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "spoofnet/audio.hpp"  // IoError / FormatError

namespace spoofnet::checkpoint {

namespace {

constexpr char kMagic[8] = {'S', 'N', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace

void save(const std::filesystem::path& path, const TensorMap& tensors,
          const std::string& meta_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw audio::IoError("cannot write " + path.string());
  out.write(kMagic, 8);
  put_string(out, meta_json);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, e] : tensors) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (Eigen::Index i = 0; i < e.data.size(); ++i)
      put<float>(out, static_cast<float>(e.data[i]));
  }
  if (!out) throw audio::IoError("write failed: " + path.string());
}

TensorMap load(const std::filesystem::path& path, std::string* meta_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw audio::IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw audio::FormatError("bad checkpoint file: " + path.string());
  const std::string meta = get_string(in);
  if (meta_json) *meta_json = meta;
  const auto count = get<std::uint32_t>(in);
  TensorMap tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = get_string(in);
    Entry e;
    const auto ndims = get<std::uint32_t>(in);
    Eigen::Index total = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      e.shape.push_back(static_cast<Eigen::Index>(get<std::uint64_t>(in)));
      total *= e.shape.back();
    }
    e.data.resize(total);
    for (Eigen::Index k = 0; k < total; ++k) e.data[k] = get<float>(in);
    tensors.emplace(name, std::move(e));
  }
  if (!in) throw audio::FormatError("truncated checkpoint: " + path.string());
  return tensors;
}

TensorMap pack(const std::vector<ad::NamedParam>& params,
               const std::vector<std::pair<std::string, ad::Array*>>& buffers,
               const ad::AmsGrad* opt) {
  TensorMap t;
  for (const auto& p : params)
    t["param/" + p.name] = {p.var->shape, p.var->value};
  for (const auto& [name, arr] : buffers)
    t["buffer/" + name] = {{arr->size()}, *arr};
  if (opt && !const_cast<ad::AmsGrad*>(opt)->slots().empty()) {
    auto& slots = const_cast<ad::AmsGrad*>(opt)->slots();
    for (size_t i = 0; i < slots.size(); ++i) {
      const std::string& pname = params[i].name;
      t["opt/m/" + pname] = {{slots[i].m.size()}, slots[i].m};
      t["opt/v/" + pname] = {{slots[i].v.size()}, slots[i].v};
      t["opt/vhat/" + pname] = {{slots[i].vhat.size()}, slots[i].vhat};
    }
    ad::Array step(1);
    step[0] = static_cast<double>(const_cast<ad::AmsGrad*>(opt)->step_count());
    t["opt/step"] = {{1}, step};
  }
  return t;
}

void unpack(const TensorMap& tensors, std::vector<ad::NamedParam>& params,
            std::vector<std::pair<std::string, ad::Array*>>& buffers,
            ad::AmsGrad* opt) {
  for (auto& p : params) {
    auto it = tensors.find("param/" + p.name);
    if (it == tensors.end())
      throw audio::FormatError("checkpoint missing tensor: " + p.name);
    if (it->second.data.size() != p.var->size())
      throw audio::FormatError("checkpoint size mismatch for " + p.name);
    p.var->value = it->second.data;
  }
  for (auto& [name, arr] : buffers) {
    auto it = tensors.find("buffer/" + name);
    if (it != tensors.end()) *arr = it->second.data;
  }
  if (opt) {
    auto step_it = tensors.find("opt/step");
    if (step_it != tensors.end()) {
      auto& slots = opt->slots();
      slots.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        slots[i].m = tensors.at("opt/m/" + params[i].name).data;
        slots[i].v = tensors.at("opt/v/" + params[i].name).data;
        slots[i].vhat = tensors.at("opt/vhat/" + params[i].name).data;
      }
      opt->mutable_step_count() = static_cast<long>(step_it->second.data[0]);
    }
  }
}

}  // namespace spoofnet::checkpoint
