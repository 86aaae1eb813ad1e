#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "archtune/archspace/bigcount.hpp"

namespace archtune::arch {

/// Parse failure with a 1-based source position.
class ParseError : public std::runtime_error {
public:
    ParseError(int line, int column, const std::string& msg);
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

/// Structural invariant violated; the message carries the block path.
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class BlockKind { basic, bottleneck };

std::string_view to_string(BlockKind k);

struct LayerDecl {
    std::string name;  // e.g. "conv1"
    int kernel = 3;
    int in_channels = 0;
    int out_channels = 0;
    int stride = 1;
    int padding() const noexcept { return kernel / 2; }
};

struct Block {
    BlockKind kind = BlockKind::basic;
    /// Output width for basic blocks, bottleneck width for bottlenecks.
    int channels = 0;
    int stride = 1;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<LayerDecl> layers;
    /// 1x1 projection shortcut, present when stride or width changes.
    std::optional<LayerDecl> projection;
};

struct Stage {
    std::vector<Block> blocks;
    int output_channels = 0;
    bool downsample = false;
};

struct ArchitectureSpec {
    std::string name;
    std::array<int, 3> input_shape{3, 32, 32};  // C, H, W
    int classes = 10;
    int stem_channels = 0;
    int stem_kernel = 3;
    int stem_stride = 1;
    std::vector<Stage> stages;

    int head_in_features() const;
};

/// Layer path helpers shared by every module that names parameters.
std::string block_path(std::size_t stage, std::size_t block);
std::string layer_path(std::size_t stage, std::size_t block, const LayerDecl& layer);

/// Parses the line-oriented architecture format (see docs/formats.md).
ArchitectureSpec parse_architecture(std::string_view text);
ArchitectureSpec load_architecture(const std::string& path_or_bundled_name);
/// Serializes in the same format; parse_architecture(to_text(a)) == a.
std::string to_text(const ArchitectureSpec& arch);
/// Re-derives channels, layers and projections and checks every Stage/Block
/// invariant. Throws InvariantError naming the block path.
void validate(const ArchitectureSpec& arch);

bool operator==(const LayerDecl& a, const LayerDecl& b);
bool operator==(const Block& a, const Block& b);
bool operator==(const Stage& a, const Stage& b);
bool operator==(const ArchitectureSpec& a, const ArchitectureSpec& b);

/// Layer-level rewrite: every conv whose kernel equals `match_kernel` becomes a
/// site choosing among `candidate_kernels`; candidate 0 is the original op.
struct MutationRule {
    int match_kernel = 3;
    std::vector<int> candidate_kernels{3, 5};

    bool matches(const LayerDecl& layer) const noexcept { return layer.kernel == match_kernel; }
};

MutationRule parse_mutation_rule(std::string_view text);
MutationRule load_mutation_rule(const std::string& path_or_bundled_name);
std::string to_text(const MutationRule& rule);

enum class ScopeLevel { small = 1, medium = 2, large = 3, full = 4 };

struct SearchScope {
    ScopeLevel level = ScopeLevel::small;

    /// Number of trailing stages that are mutable and retrainable.
    int trailing_stages() const noexcept { return static_cast<int>(level); }
    /// Index of the first in-scope stage for an architecture with `stages` stages.
    std::size_t first_stage(std::size_t stages) const;
};

std::optional<ScopeLevel> parse_scope(std::string_view name);
std::string_view to_string(ScopeLevel level);

struct MutableSite {
    std::size_t stage = 0;
    std::size_t block = 0;
    std::size_t layer = 0;
    std::string path;  // e.g. "s3.b1.conv2"
    std::vector<int> candidate_kernels;
};

/// The compiled search space: ordered sites front-to-back by depth.
struct SupernetSpec {
    ArchitectureSpec base;
    MutationRule rule;
    SearchScope scope;
    std::vector<MutableSite> sites;

    std::size_t num_sites() const noexcept { return sites.size(); }
    std::size_t first_scope_stage() const { return scope.first_stage(base.stages.size()); }
    /// Index of the site at `path`, if any.
    std::optional<std::size_t> site_index(std::string_view path) const;
};

class EmptySearchSpaceError : public std::runtime_error {
public:
    EmptySearchSpaceError() : std::runtime_error("empty search space") {}
};

SupernetSpec compile_search_space(const ArchitectureSpec& arch, const MutationRule& rule, SearchScope scope);

BigCount count_subnets(const SupernetSpec& spec);

/// One candidate index per site, in site order.
class ActionVector {
public:
    ActionVector() = default;
    explicit ActionVector(std::vector<int> a) : a_(std::move(a)) {}
    static ActionVector zeros(std::size_t k) { return ActionVector(std::vector<int>(k, 0)); }

    std::size_t size() const noexcept { return a_.size(); }
    int operator[](std::size_t i) const { return a_.at(i); }
    const std::vector<int>& values() const noexcept { return a_; }

    /// Digit string, e.g. "11100001".
    std::string to_string() const;
    static ActionVector from_string(std::string_view digits);

    friend bool operator==(const ActionVector&, const ActionVector&) = default;

private:
    std::vector<int> a_;
};

/// Resolved candidate per site, plus the base architecture with the chosen
/// kernels substituted in place.
struct SubnetSpec {
    ArchitectureSpec arch;
    std::vector<int> site_kernels;

    friend bool operator==(const SubnetSpec& a, const SubnetSpec& b) {
        return a.site_kernels == b.site_kernels && a.arch == b.arch;
    }
};

SubnetSpec decode_action_vector(const SupernetSpec& spec, const ActionVector& a);
ActionVector encode_subnet(const SupernetSpec& spec, const SubnetSpec& subnet);

/// Bundled descriptions: "resnet18", "resnet50", "mini18"; rule "kernel3to5".
std::optional<std::string_view> bundled_architecture(std::string_view name);
std::optional<std::string_view> bundled_rule(std::string_view name);

}  // namespace archtune::arch
