#include "dstu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <unordered_map>

namespace dstu {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>((v >> s) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) v |= static_cast<std::uint32_t>(bytes_[pos_ + s]) << (8 * s);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint is truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

struct Record {
  Shape shape;
  std::vector<float> values;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store) {
  std::vector<std::uint8_t> out{'D', 'S', 'T', 'U'};
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto e : p.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : p.tensor.data())
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

void decode_checkpoint(const std::vector<std::uint8_t>& bytes, ParamStore& store) {
  Reader in(bytes);
  if (in.str(4) != "DSTU") throw CheckpointError("not a checkpoint: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = in.u32();
  std::unordered_map<std::string, Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = in.str(in.u32());
    Record r;
    const std::uint32_t rank = in.u32();
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(in.u32());
    r.values.resize(numel(r.shape));
    for (auto& v : r.values) v = std::bit_cast<float>(in.u32());
    if (!records.emplace(name, std::move(r)).second)
      throw CheckpointError("checkpoint repeats parameter " + name);
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint records");

  for (auto& p : store.params()) {
    auto it = records.find(p.name);
    if (it == records.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (it->second.shape != p.tensor.shape())
      throw CheckpointError("parameter " + p.name + " has shape " + to_string(it->second.shape) +
                            " in checkpoint, model expects " + to_string(p.tensor.shape()));
  }
  if (records.size() != store.params().size())
    throw CheckpointError("checkpoint holds " + std::to_string(records.size()) +
                          " parameters, model has " + std::to_string(store.params().size()));
  for (auto& p : store.params()) {
    const auto& src = records.at(p.name).values;
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(src[i]);
    p.tensor.zero_grad();
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw CheckpointError("write failed for " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  decode_checkpoint(bytes, store);
}

void round_to_checkpoint_precision(ParamStore& store) {
  for (auto& p : store.params())
    for (auto& v : p.tensor.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace dstu
