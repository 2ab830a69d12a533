#include "nuta/serialize.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "nuta/error.hpp"

namespace nuta {

namespace {
constexpr char kMagic[8] = {'N', 'U', 'T', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require<IoError>(in.good(), "checkpoint: truncated file ", path);
  return v;
}
}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items) {
  std::ofstream out(path, std::ios::binary);
  require<IoError>(out.good(), "checkpoint: cannot write ", path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<uint64_t>(items.size()));
  for (const auto& [name, t] : items) {
    require<ValueError>(t.defined(), "checkpoint: undefined tensor '", name, "'");
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Shape& s = t.shape();
    write_pod(out, static_cast<uint32_t>(s.rank()));
    for (int64_t d : s.dims()) write_pod(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  require<IoError>(out.good(), "checkpoint: write failed for ", path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(in.good(), "checkpoint: cannot open ", path);
  char magic[8];
  in.read(magic, sizeof(magic));
  require<IoError>(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
                   "checkpoint: bad magic in ", path);
  uint32_t version = read_pod<uint32_t>(in, path);
  require<IoError>(version == kVersion, "checkpoint: unsupported version ", version,
                   " in ", path);
  uint64_t count = read_pod<uint64_t>(in, path);

  std::vector<std::pair<std::string, Tensor>> items;
  items.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = read_pod<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    require<IoError>(in.good(), "checkpoint: truncated name in ", path);
    uint32_t rank = read_pod<uint32_t>(in, path);
    std::vector<int64_t> dims(rank);
    for (uint32_t d = 0; d < rank; ++d) dims[d] = read_pod<int64_t>(in, path);
    Shape shape(dims);
    std::vector<double> data(static_cast<size_t>(shape.numel()));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    require<IoError>(in.good(), "checkpoint: truncated data for '", name, "' in ", path);
    items.emplace_back(name, Tensor::from_vector(shape, std::move(data)));
  }
  return items;
}

void load_into(const std::string& path,
               std::vector<std::pair<std::string, Tensor>>& targets) {
  auto items = load_tensors(path);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : items) {
    require<ValueError>(!by_name.count(name), "checkpoint: duplicate tensor '", name,
                        "' in ", path);
    by_name.emplace(name, t);
  }
  for (auto& [name, target] : targets) {
    auto it = by_name.find(name);
    require<ValueError>(it != by_name.end(), "checkpoint: missing tensor '", name, "' in ",
                        path);
    require<ValueError>(it->second.shape() == target.shape(), "checkpoint: '", name,
                        "' has extents ", it->second.shape().str(), ", expected ",
                        target.shape().str());
    target.overwrite_data(it->second.data());
    by_name.erase(it);
  }
  require<ValueError>(by_name.empty(), "checkpoint: ", by_name.size(),
                      " unmatched tensors in ", path, " (first: '",
                      by_name.begin()->first, "')");
}

}  // namespace nuta
