#pragma once

#include <array>
#include <string>

#include "archtune/supernet/network.hpp"

namespace archtune::pipe {

/// Procedural oriented-grating textures. SOURCE uses fine periods; TARGET
/// uses coarser periods at shifted orientations, so wider kernels see more of
/// each period.
enum class TaskKind { source, target };

struct DataSpec {
    TaskKind kind = TaskKind::source;
    std::array<int, 3> shape{3, 16, 16};
    int classes = 10;
    int train_size = 2000;
    int val_size = 500;
    int test_size = 500;
    double noise = 1.0;
    std::uint64_t seed = 1;
};

struct Dataset {
    net::LabeledSet train, val, test;
};

/// Class c has period index c / 5 and orientation index c % 5; needs
/// exactly 10 classes. Equal specs give identical bytes.
Dataset generate_dataset(const DataSpec& spec);

void save_dataset(const std::string& path, const Dataset& d);
Dataset load_dataset(const std::string& path);

}  // namespace archtune::pipe
