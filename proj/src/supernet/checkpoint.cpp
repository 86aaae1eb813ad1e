#include "archtune/supernet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace archtune::net {

namespace {

constexpr char kMagic[8] = {'A', 'R', 'C', 'H', 'T', 'C', 'K', 'P'};

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void put(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, std::string_view s) {
    put(out, s.size(), 4);
    out.append(s);
}

class Reader {
public:
    explicit Reader(std::string_view b) : b_(b) {}
    std::uint64_t get(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string get_string() {
        const auto n = static_cast<std::size_t>(get(4));
        need(n);
        std::string s(b_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::string_view b_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::string& arch_name, std::span<Parameter* const> params) {
    std::string out(kMagic, sizeof kMagic);
    put(out, kCheckpointVersion, 4);
    put(out, nk::Rng::hash_tag(arch_name), 8);
    put_string(out, arch_name);
    put(out, params.size(), 4);
    for (const Parameter* p : params) {
        put_string(out, p->name);
        put(out, p->value.rank(), 4);
        for (std::size_t d : p->value.shape()) put(out, d, 8);
        for (double v : p->value.data()) put(out, std::bit_cast<std::uint64_t>(v), 8);
    }
    put(out, fnv1a(out), 8);
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError("not a checkpoint (bad magic)");
    }
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    Reader trailer(bytes.substr(bytes.size() - 8));
    if (trailer.get(8) != fnv1a(body)) throw CheckpointError("checkpoint checksum mismatch");
    Reader r(body);
    r.get(4);
    r.get(4);
    const auto version = static_cast<std::uint32_t>(r.get(4));
    if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const std::uint64_t hash = r.get(8);
    Checkpoint ck;
    ck.arch_name = r.get_string();
    if (hash != nk::Rng::hash_tag(ck.arch_name)) throw CheckpointError("checkpoint architecture hash mismatch");
    const auto count = static_cast<std::size_t>(r.get(4));
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = r.get_string();
        nk::Shape shape(static_cast<std::size_t>(r.get(4)));
        for (auto& d : shape) d = static_cast<std::size_t>(r.get(8));
        std::vector<double> data(nk::shape_size(shape));
        for (auto& v : data) v = std::bit_cast<double>(r.get(8));
        if (!ck.tensors.emplace(name, NdArray(shape, std::move(data))).second) {
            throw CheckpointError("duplicate tensor " + name + " in checkpoint");
        }
    }
    if (r.pos() != body.size()) throw CheckpointError("trailing bytes in checkpoint");
    return ck;
}

void save_checkpoint(const std::string& path, const std::string& arch_name, std::span<Parameter* const> params) {
    const std::string bytes = encode_checkpoint(arch_name, params);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("write failed for " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot rename " + tmp + " to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

void restore(ParamStore& store, const TensorMap& tensors) {
    for (Parameter* p : store.all()) {
        auto it = tensors.find(p->name);
        if (it == tensors.end()) throw CheckpointError("checkpoint is missing " + p->name);
        if (it->second.shape() != p->value.shape()) {
            throw CheckpointError("shape mismatch at " + p->name + ": checkpoint " +
                                  nk::shape_to_string(it->second.shape()) + ", model " +
                                  nk::shape_to_string(p->value.shape()));
        }
        p->value = it->second;
    }
}

}  // namespace archtune::net
