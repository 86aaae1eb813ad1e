#include "archtune/archspace/archspace.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace archtune::arch {

ParseError::ParseError(int line, int column, const std::string& msg)
    : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

std::string_view to_string(BlockKind k) { return k == BlockKind::basic ? "basic" : "bottleneck"; }

std::string block_path(std::size_t stage, std::size_t block) {
    return "s" + std::to_string(stage + 1) + ".b" + std::to_string(block);
}

std::string layer_path(std::size_t stage, std::size_t block, const LayerDecl& layer) {
    return block_path(stage, block) + "." + layer.name;
}

int ArchitectureSpec::head_in_features() const {
    if (stages.empty()) return stem_channels;
    return stages.back().output_channels;
}

namespace {

// A whitespace-separated token and its 1-based column.
struct Token {
    std::string_view text;
    int column;
};

std::vector<Token> tokenize(std::string_view line) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        if (i >= line.size() || line[i] == '#') break;
        const std::size_t start = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r' && line[i] != '#') ++i;
        out.push_back({line.substr(start, i - start), static_cast<int>(start + 1)});
    }
    return out;
}

template <class F>
void for_each_line(std::string_view text, F&& f) {
    int lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        const std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        ++lineno;
        f(lineno, line);
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
}

int parse_int(const Token& tok, int line, const char* what) {
    int v = 0;
    auto res = std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.text.data() + tok.text.size()) {
        throw ParseError(line, tok.column, std::string("expected integer ") + what + ", got '" +
                                               std::string(tok.text) + "'");
    }
    return v;
}

int parse_positive(const Token& tok, int line, const char* what) {
    const int v = parse_int(tok, line, what);
    if (v <= 0) throw ParseError(line, tok.column, std::string(what) + " must be positive");
    return v;
}

bool valid_kernel(int k) { return k == 1 || k == 3 || k == 5 || k == 7; }

// Optional "key=value" token; returns the value text when the key matches.
std::optional<std::string_view> keyed(const Token& tok, std::string_view key) {
    if (tok.text.size() > key.size() + 1 && tok.text.substr(0, key.size()) == key && tok.text[key.size()] == '=') {
        return tok.text.substr(key.size() + 1);
    }
    return std::nullopt;
}

std::vector<int> parse_int_list(std::string_view s, int line, int column, const char* what) {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        const std::string_view item = s.substr(pos, comma == std::string_view::npos ? s.size() - pos : comma - pos);
        out.push_back(parse_int(Token{item, column + static_cast<int>(pos)}, line, what));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace

void validate(const ArchitectureSpec& arch) {
    if (arch.stages.empty()) throw InvariantError(arch.name + ": architecture has no stages");
    if (arch.classes <= 0) throw InvariantError(arch.name + ": classes must be positive");
    for (int d : arch.input_shape) {
        if (d <= 0) throw InvariantError(arch.name + ": input shape must be positive");
    }
    int in = arch.stem_channels;
    for (std::size_t s = 0; s < arch.stages.size(); ++s) {
        const Stage& st = arch.stages[s];
        if (st.blocks.empty()) throw InvariantError("s" + std::to_string(s + 1) + ": stage has no blocks");
        for (std::size_t b = 0; b < st.blocks.size(); ++b) {
            const Block& blk = st.blocks[b];
            const std::string path = block_path(s, b);
            if (blk.layers.empty()) throw InvariantError(path + ": block has no layers");
            if (blk.in_channels != in) throw InvariantError(path + ": input width does not chain from previous block");
            if (blk.kind == BlockKind::basic) {
                if (blk.layers.size() != 2) throw InvariantError(path + ": basic block must have exactly two convs");
            } else {
                if (blk.layers.size() != 3) throw InvariantError(path + ": bottleneck must have exactly three convs");
                if (blk.layers[0].kernel != 1 || blk.layers[2].kernel != 1) {
                    throw InvariantError(path + ": bottleneck 1x1 convs must keep kernel 1");
                }
            }
            int c = blk.in_channels;
            for (const auto& l : blk.layers) {
                if (!valid_kernel(l.kernel)) throw InvariantError(path + "." + l.name + ": kernel not in {1,3,5,7}");
                if (l.in_channels != c) throw InvariantError(path + "." + l.name + ": channel chain broken");
                c = l.out_channels;
            }
            if (c != blk.out_channels) throw InvariantError(path + ": last conv width differs from block output");
            const bool needs_proj = blk.stride != 1 || blk.in_channels != blk.out_channels;
            if (needs_proj != blk.projection.has_value()) {
                throw InvariantError(path + ": residual shortcut shape mismatch (projection required when downsampling)");
            }
            in = blk.out_channels;
        }
        if (st.output_channels != in) throw InvariantError("s" + std::to_string(s + 1) + ": output width mismatch");
    }
}

namespace {

Block make_block(BlockKind kind, int channels, int stride, int in_channels) {
    Block b;
    b.kind = kind;
    b.channels = channels;
    b.stride = stride;
    b.in_channels = in_channels;
    if (kind == BlockKind::basic) {
        b.out_channels = channels;
        b.layers.push_back({"conv1", 3, in_channels, channels, stride});
        b.layers.push_back({"conv2", 3, channels, channels, 1});
    } else {
        b.out_channels = 4 * channels;
        b.layers.push_back({"conv1", 1, in_channels, channels, 1});
        b.layers.push_back({"conv2", 3, channels, channels, stride});
        b.layers.push_back({"conv3", 1, channels, 4 * channels, 1});
    }
    if (stride != 1 || in_channels != b.out_channels) {
        b.projection = LayerDecl{"proj", 1, in_channels, b.out_channels, stride};
    }
    return b;
}

}  // namespace

ArchitectureSpec parse_architecture(std::string_view text) {
    ArchitectureSpec arch;
    bool have_input = false, have_classes = false;
    int stem_kernel = 3, stem_stride = 1;
    int current_stage = 0;
    struct PendingBlock {
        BlockKind kind;
        int channels;
        int stride;
        std::vector<int> kernels;
        int line;
    };
    std::vector<std::vector<PendingBlock>> stages;

    for_each_line(text, [&](int lineno, std::string_view line) {
        auto toks = tokenize(line);
        if (toks.empty()) return;
        const auto& head = toks[0];
        if (head.text.front() == '[') {
            if (toks.size() != 2 || head.text != "[stage" || toks[1].text.back() != ']') {
                throw ParseError(lineno, head.column, "expected '[stage N]'");
            }
            Token num{toks[1].text.substr(0, toks[1].text.size() - 1), toks[1].column};
            const int n = parse_positive(num, lineno, "stage number");
            if (n != current_stage + 1) {
                throw ParseError(lineno, num.column, "stage " + std::to_string(n) + " out of order, expected " +
                                                         std::to_string(current_stage + 1));
            }
            current_stage = n;
            stages.emplace_back();
            return;
        }
        if (head.text == "name") {
            if (toks.size() != 2) throw ParseError(lineno, head.column, "expected 'name <identifier>'");
            arch.name = std::string(toks[1].text);
        } else if (head.text == "input") {
            if (toks.size() != 2) throw ParseError(lineno, head.column, "expected 'input <C>x<H>x<W>'");
            std::string_view v = toks[1].text;
            std::array<int, 3> dims{};
            std::size_t pos = 0;
            for (int i = 0; i < 3; ++i) {
                const std::size_t x = v.find('x', pos);
                if ((i < 2) == (x == std::string_view::npos)) {
                    throw ParseError(lineno, toks[1].column, "expected 'input <C>x<H>x<W>'");
                }
                const auto part = v.substr(pos, i < 2 ? x - pos : v.size() - pos);
                dims[i] = parse_positive(Token{part, toks[1].column + static_cast<int>(pos)}, lineno, "input dimension");
                pos = x + 1;
            }
            arch.input_shape = dims;
            have_input = true;
        } else if (head.text == "classes") {
            if (toks.size() != 2) throw ParseError(lineno, head.column, "expected 'classes <K>'");
            arch.classes = parse_positive(toks[1], lineno, "class count");
            have_classes = true;
        } else if (head.text == "stem") {
            if (toks.size() < 2) throw ParseError(lineno, head.column, "expected 'stem <channels>'");
            arch.stem_channels = parse_positive(toks[1], lineno, "stem channels");
            for (std::size_t i = 2; i < toks.size(); ++i) {
                if (auto k = keyed(toks[i], "kernel")) {
                    stem_kernel = parse_int(Token{*k, toks[i].column + 7}, lineno, "stem kernel");
                    if (!valid_kernel(stem_kernel)) throw ParseError(lineno, toks[i].column, "kernel not in {1,3,5,7}");
                } else if (auto s = keyed(toks[i], "stride")) {
                    stem_stride = parse_positive(Token{*s, toks[i].column + 7}, lineno, "stem stride");
                } else {
                    throw ParseError(lineno, toks[i].column, "unknown stem option '" + std::string(toks[i].text) + "'");
                }
            }
        } else if (head.text == "block") {
            if (current_stage == 0) throw ParseError(lineno, head.column, "block outside of a [stage N] section");
            if (toks.size() < 4 || toks.size() > 5) {
                throw ParseError(lineno, head.column, "expected 'block <kind> <channels> <stride> [kernels=...]'");
            }
            PendingBlock pb{};
            if (toks[1].text == "basic") {
                pb.kind = BlockKind::basic;
            } else if (toks[1].text == "bottleneck") {
                pb.kind = BlockKind::bottleneck;
            } else {
                throw ParseError(lineno, toks[1].column, "unknown block kind '" + std::string(toks[1].text) + "'");
            }
            pb.channels = parse_positive(toks[2], lineno, "block channels");
            pb.stride = parse_positive(toks[3], lineno, "block stride");
            if (toks.size() == 5) {
                auto k = keyed(toks[4], "kernels");
                if (!k) throw ParseError(lineno, toks[4].column, "expected 'kernels=<k>,...'");
                pb.kernels = parse_int_list(*k, lineno, toks[4].column + 8, "kernel");
            }
            pb.line = lineno;
            stages.back().push_back(std::move(pb));
        } else {
            throw ParseError(lineno, head.column, "unknown directive '" + std::string(head.text) + "'");
        }
    });

    if (arch.name.empty()) throw ParseError(1, 1, "missing 'name' line");
    if (!have_input) throw ParseError(1, 1, "missing 'input' line");
    if (!have_classes) throw ParseError(1, 1, "missing 'classes' line");
    if (stages.empty()) throw ParseError(1, 1, "architecture has zero stages");

    if (arch.stem_channels == 0) {
        const auto& first = stages.front();
        if (first.empty()) throw ParseError(1, 1, "stage 1 has no blocks");
        arch.stem_channels = first.front().channels;
    }
    int in = arch.stem_channels;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        if (stages[s].empty()) {
            throw ParseError(1, 1, "stage " + std::to_string(s + 1) + " has no blocks");
        }
        Stage st;
        for (auto& pb : stages[s]) {
            Block b = make_block(pb.kind, pb.channels, pb.stride, in);
            if (!pb.kernels.empty()) {
                if (pb.kernels.size() != b.layers.size()) {
                    throw ParseError(pb.line, 1, "kernels= lists " + std::to_string(pb.kernels.size()) +
                                                     " entries for a block with " + std::to_string(b.layers.size()) +
                                                     " convs");
                }
                for (std::size_t i = 0; i < b.layers.size(); ++i) b.layers[i].kernel = pb.kernels[i];
            }
            st.downsample = st.downsample || b.stride != 1;
            in = b.out_channels;
            st.blocks.push_back(std::move(b));
        }
        st.output_channels = in;
        arch.stages.push_back(std::move(st));
    }
    arch.stem_kernel = stem_kernel;
    arch.stem_stride = stem_stride;
    validate(arch);
    return arch;
}


namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

ArchitectureSpec load_architecture(const std::string& path_or_bundled_name) {
    if (auto text = bundled_architecture(path_or_bundled_name)) return parse_architecture(*text);
    return parse_architecture(read_file(path_or_bundled_name));
}

std::string to_text(const ArchitectureSpec& arch) {
    std::ostringstream out;
    out << "name " << arch.name << "\n";
    out << "input " << arch.input_shape[0] << "x" << arch.input_shape[1] << "x" << arch.input_shape[2] << "\n";
    out << "classes " << arch.classes << "\n";
    out << "stem " << arch.stem_channels;
    if (arch.stem_kernel != 3 || arch.stem_stride != 1) {
        out << " kernel=" << arch.stem_kernel << " stride=" << arch.stem_stride;
    }
    out << "\n";
    for (std::size_t s = 0; s < arch.stages.size(); ++s) {
        out << "\n[stage " << s + 1 << "]\n";
        for (const Block& b : arch.stages[s].blocks) {
            out << "block " << to_string(b.kind) << " " << b.channels << " " << b.stride;
            const Block def = make_block(b.kind, b.channels, b.stride, b.in_channels);
            bool custom = false;
            for (std::size_t i = 0; i < b.layers.size(); ++i) {
                custom = custom || i >= def.layers.size() || b.layers[i].kernel != def.layers[i].kernel;
            }
            if (custom) {
                out << " kernels=";
                for (std::size_t i = 0; i < b.layers.size(); ++i) out << (i ? "," : "") << b.layers[i].kernel;
            }
            out << "\n";
        }
    }
    return out.str();
}

bool operator==(const LayerDecl& a, const LayerDecl& b) {
    return a.name == b.name && a.kernel == b.kernel && a.in_channels == b.in_channels &&
           a.out_channels == b.out_channels && a.stride == b.stride;
}

bool operator==(const Block& a, const Block& b) {
    return a.kind == b.kind && a.channels == b.channels && a.stride == b.stride && a.in_channels == b.in_channels &&
           a.out_channels == b.out_channels && a.layers == b.layers && a.projection == b.projection;
}

bool operator==(const Stage& a, const Stage& b) {
    return a.blocks == b.blocks && a.output_channels == b.output_channels && a.downsample == b.downsample;
}

bool operator==(const ArchitectureSpec& a, const ArchitectureSpec& b) {
    return a.name == b.name && a.input_shape == b.input_shape && a.classes == b.classes &&
           a.stem_channels == b.stem_channels && a.stem_kernel == b.stem_kernel && a.stem_stride == b.stem_stride &&
           a.stages == b.stages;
}

MutationRule parse_mutation_rule(std::string_view text) {
    std::optional<int> match;
    std::vector<int> candidates;
    int candidates_line = 0;
    for_each_line(text, [&](int lineno, std::string_view line) {
        auto toks = tokenize(line);
        if (toks.empty()) return;
        if (toks[0].text == "match") {
            if (toks.size() != 3 || toks[1].text != "conv") {
                throw ParseError(lineno, toks[0].column, "expected 'match conv kernel=<k>'");
            }
            auto k = keyed(toks[2], "kernel");
            if (!k) throw ParseError(lineno, toks[2].column, "expected 'kernel=<k>'");
            match = parse_int(Token{*k, toks[2].column + 7}, lineno, "kernel");
            if (!valid_kernel(*match)) throw ParseError(lineno, toks[2].column, "kernel not in {1,3,5,7}");
        } else if (toks[0].text == "candidates") {
            if (toks.size() != 2) throw ParseError(lineno, toks[0].column, "expected 'candidates kernel=a,kernel=b'");
            std::string_view list = toks[1].text;
            std::size_t pos = 0;
            while (pos <= list.size()) {
                const std::size_t comma = list.find(',', pos);
                const auto item = list.substr(pos, comma == std::string_view::npos ? list.size() - pos : comma - pos);
                const int col = toks[1].column + static_cast<int>(pos);
                auto k = keyed(Token{item, col}, "kernel");
                if (!k) throw ParseError(lineno, col, "expected 'kernel=<k>'");
                const int v = parse_int(Token{*k, col + 7}, lineno, "kernel");
                if (!valid_kernel(v)) throw ParseError(lineno, col, "kernel not in {1,3,5,7}");
                if (std::find(candidates.begin(), candidates.end(), v) != candidates.end()) {
                    throw ParseError(lineno, col, "duplicate candidate kernel=" + std::to_string(v));
                }
                candidates.push_back(v);
                if (comma == std::string_view::npos) break;
                pos = comma + 1;
            }
            candidates_line = lineno;
        } else {
            throw ParseError(lineno, toks[0].column, "unknown directive '" + std::string(toks[0].text) + "'");
        }
    });
    if (!match) throw ParseError(1, 1, "missing 'match' line");
    if (candidates.size() < 2) throw ParseError(candidates_line ? candidates_line : 1, 1, "need at least two candidates");
    if (candidates.front() != *match) {
        throw ParseError(candidates_line, 1, "first candidate must be the matched kernel");
    }
    return MutationRule{*match, candidates};
}

MutationRule load_mutation_rule(const std::string& path_or_bundled_name) {
    if (auto text = bundled_rule(path_or_bundled_name)) return parse_mutation_rule(*text);
    return parse_mutation_rule(read_file(path_or_bundled_name));
}

std::string to_text(const MutationRule& rule) {
    std::string out = "match conv kernel=" + std::to_string(rule.match_kernel) + "\ncandidates ";
    for (std::size_t i = 0; i < rule.candidate_kernels.size(); ++i) {
        out += (i ? ",kernel=" : "kernel=") + std::to_string(rule.candidate_kernels[i]);
    }
    return out + "\n";
}

std::size_t SearchScope::first_stage(std::size_t stages) const {
    const auto n = static_cast<std::size_t>(trailing_stages());
    if (n > stages) {
        throw std::invalid_argument("scope " + std::string(to_string(level)) + " needs " + std::to_string(n) +
                                    " stages, architecture has " + std::to_string(stages));
    }
    return stages - n;
}

std::optional<ScopeLevel> parse_scope(std::string_view name) {
    if (name == "small") return ScopeLevel::small;
    if (name == "medium") return ScopeLevel::medium;
    if (name == "large") return ScopeLevel::large;
    if (name == "full") return ScopeLevel::full;
    return std::nullopt;
}

std::string_view to_string(ScopeLevel level) {
    switch (level) {
        case ScopeLevel::small: return "small";
        case ScopeLevel::medium: return "medium";
        case ScopeLevel::large: return "large";
        case ScopeLevel::full: return "full";
    }
    return "?";
}

std::optional<std::size_t> SupernetSpec::site_index(std::string_view path) const {
    for (std::size_t i = 0; i < sites.size(); ++i) {
        if (sites[i].path == path) return i;
    }
    return std::nullopt;
}

SupernetSpec compile_search_space(const ArchitectureSpec& arch, const MutationRule& rule, SearchScope scope) {
    validate(arch);
    SupernetSpec spec{arch, rule, scope, {}};
    for (std::size_t s = spec.first_scope_stage(); s < arch.stages.size(); ++s) {
        const auto& blocks = arch.stages[s].blocks;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            for (std::size_t l = 0; l < blocks[b].layers.size(); ++l) {
                const LayerDecl& layer = blocks[b].layers[l];
                if (!rule.matches(layer)) continue;
                spec.sites.push_back({s, b, l, layer_path(s, b, layer), rule.candidate_kernels});
            }
        }
    }
    if (spec.sites.empty()) throw EmptySearchSpaceError();
    return spec;
}

BigCount count_subnets(const SupernetSpec& spec) {
    BigCount n(1);
    for (const auto& site : spec.sites) n *= static_cast<std::uint32_t>(site.candidate_kernels.size());
    return n;
}

std::string ActionVector::to_string() const {
    std::string s;
    for (int v : a_) {
        if (v < 0 || v > 9) throw std::out_of_range("action value does not fit one digit");
        s.push_back(static_cast<char>('0' + v));
    }
    return s;
}

ActionVector ActionVector::from_string(std::string_view digits) {
    std::vector<int> a;
    for (char c : digits) {
        if (c < '0' || c > '9') throw std::invalid_argument("non-digit in action string '" + std::string(digits) + "'");
        a.push_back(c - '0');
    }
    return ActionVector(std::move(a));
}

SubnetSpec decode_action_vector(const SupernetSpec& spec, const ActionVector& a) {
    if (a.size() != spec.num_sites()) {
        throw std::invalid_argument("action vector has " + std::to_string(a.size()) + " entries, search space has " +
                                    std::to_string(spec.num_sites()) + " sites");
    }
    SubnetSpec out{spec.base, {}};
    out.site_kernels.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const MutableSite& site = spec.sites[i];
        if (a[i] < 0 || static_cast<std::size_t>(a[i]) >= site.candidate_kernels.size()) {
            throw std::out_of_range("action " + std::to_string(a[i]) + " out of range at site " + site.path);
        }
        const int k = site.candidate_kernels[static_cast<std::size_t>(a[i])];
        out.arch.stages[site.stage].blocks[site.block].layers[site.layer].kernel = k;
        out.site_kernels.push_back(k);
    }
    return out;
}

ActionVector encode_subnet(const SupernetSpec& spec, const SubnetSpec& subnet) {
    if (subnet.site_kernels.size() != spec.num_sites()) {
        throw std::invalid_argument("subnet does not match search space size");
    }
    std::vector<int> a;
    for (std::size_t i = 0; i < spec.num_sites(); ++i) {
        const auto& c = spec.sites[i].candidate_kernels;
        auto it = std::find(c.begin(), c.end(), subnet.site_kernels[i]);
        if (it == c.end()) throw std::invalid_argument("kernel not a candidate at site " + spec.sites[i].path);
        a.push_back(static_cast<int>(it - c.begin()));
    }
    return ActionVector(std::move(a));
}

}  // namespace archtune::arch
