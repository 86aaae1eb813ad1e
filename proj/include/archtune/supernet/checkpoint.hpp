#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "archtune/supernet/network.hpp"

namespace archtune::net {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using TensorMap = std::map<std::string, NdArray, std::less<>>;

struct Checkpoint {
    std::string arch_name;
    TensorMap tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout in docs/formats.md.
std::string encode_checkpoint(const std::string& arch_name, std::span<Parameter* const> params);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const std::string& arch_name, std::span<Parameter* const> params);
Checkpoint load_checkpoint(const std::string& path);

/// Copies every tensor of `ckpt` into the same-named parameter of `store`.
/// Missing names or shape mismatches throw CheckpointError naming the path.
void restore(ParamStore& store, const TensorMap& tensors);

}  // namespace archtune::net
