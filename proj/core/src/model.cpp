#include "crynet/model.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace crynet {

int emotion_from_string(const std::string& name) {
    for (size_t i = 0; i < kEmotionNames.size(); ++i)
        if (name == kEmotionNames[i]) return static_cast<int>(i);
    throw LabelOutOfRange("unknown emotion label: " + name);
}

const char* emotion_name(int id) {
    if (id < 0 || id >= static_cast<int>(kEmotionNames.size()))
        throw LabelOutOfRange("class id " + std::to_string(id));
    return kEmotionNames[static_cast<size_t>(id)];
}

void ModelConfig::validate() const {
    if (input_coeffs < 1) throw ConfigInvalid("input_coeffs must be >= 1");
    if (channels < 2) throw ConfigInvalid("channels must be >= 2");
    if (num_classes < 2) throw ConfigInvalid("num_classes must be >= 2");
    if (reduction < 1 || channels % reduction != 0)
        throw ConfigInvalid("channels must be divisible by the reduction ratio");
    if (res2_scale < 2 || channels % res2_scale != 0)
        throw ConfigInvalid("channels must be divisible by res2_scale");
    if (heads < 1 || (4 * channels) % heads != 0)
        throw ConfigInvalid("4*channels must be divisible by the head count");
    for (int d : block_dilations)
        if (d < 1) throw ConfigInvalid("block dilations must be >= 1");
    for (int d : mca_dilations)
        if (d < 1) throw ConfigInvalid("branch dilations must be >= 1");
    if (target_frames < 1) throw ConfigInvalid("target_frames must be >= 1");
}

Model::Model(const ModelConfig& cfg, Arch arch, std::uint64_t seed)
    : stem(), stem_bn(1), agg(), agg_bn(1), cfg_(cfg), arch_(arch) {
    cfg.validate();
    Rng rng(seed);
    const int c = cfg.channels;

    stem = Conv1dLayer(cfg.input_coeffs, c, 5, rng, 1, Padding::Same);
    stem_bn = BatchNorm1d(c);
    const bool rse = arch == Arch::Improved && cfg.use_rse;
    for (int i = 0; i < 3; ++i)
        blocks.emplace_back(c, cfg.reduction, cfg.res2_scale, cfg.block_dilations[i], rse,
                            rng);

    if (arch == Arch::Improved) {
        // concat of the three block outputs reduced back to C, then the
        // four-branch expansion to 4C (attention-gated or plain when ablated)
        agg = Conv1dLayer(3 * c, c, 1, rng);
        agg_bn = BatchNorm1d(c);
        if (cfg.use_mca)
            mca.emplace(c, cfg.reduction, cfg.mca_dilations, rng);
        else
            expand.emplace(c, 4 * c, 1, rng);
        if (cfg.use_diff_attn) diff_attn.emplace(4 * c, cfg.heads, rng);
        head = DenseLayer(4 * c, cfg.num_classes, rng);
    } else {
        agg = Conv1dLayer(3 * c, 4 * c, 1, rng);
        agg_bn = BatchNorm1d(4 * c);
        asp.emplace(4 * c, c, rng);
        head = DenseLayer(8 * c, cfg.num_classes, rng);
    }
}

Tensor Model::forward_logits(const Tensor& x, Mode mode) {
    const bool batched = x.rank() == 3;
    if (!batched && x.rank() != 2)
        throw ShapeMismatch("model input must be {coeffs,T} or {B,coeffs,T}");
    Tensor in = batched ? x : reshape(x, {1, x.dim(0), x.dim(1)});
    if (in.dim(1) != cfg_.input_coeffs)
        throw ShapeMismatch("expected " + std::to_string(cfg_.input_coeffs) +
                            " input coefficients, got " + std::to_string(in.dim(1)));

    Tensor h = stem_bn.forward(relu(stem.forward(in)), mode);
    Tensor h1 = blocks[0].forward(h, mode);
    Tensor h2 = blocks[1].forward(h1, mode);
    Tensor h3 = blocks[2].forward(h2, mode);
    Tensor cat = concat_channels({h1, h2, h3});
    Tensor a = agg_bn.forward(relu(agg.forward(cat)), mode);

    Tensor logits;
    if (arch_ == Arch::Improved) {
        Tensor f = mca ? mca->forward(a) : expand->forward(a);
        Tensor z = global_avg_pool_time(f);  // {B,4C}
        Tensor r = diff_attn ? diff_attn->forward(z) : z;
        logits = head.forward(r);
    } else {
        logits = head.forward(asp->forward(a));
    }
    return batched ? logits : reshape(logits, {logits.dim(1)});
}

Tensor Model::forward(const Tensor& x, Mode mode) {
    Tensor logits = forward_logits(x, mode);
    return softmax(logits, logits.rank() - 1);
}

ParamRegistry Model::registry() {
    ParamRegistry reg;
    stem.collect("stem", reg);
    reg.add("stem_bn.gamma", stem_bn.gamma);
    reg.add("stem_bn.beta", stem_bn.beta);
    reg.add_stats("stem_bn.running_mean", &stem_bn.running_mean);
    reg.add_stats("stem_bn.running_var", &stem_bn.running_var);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].collect("block" + std::to_string(i + 1), reg);
    agg.collect("agg", reg);
    reg.add("agg_bn.gamma", agg_bn.gamma);
    reg.add("agg_bn.beta", agg_bn.beta);
    reg.add_stats("agg_bn.running_mean", &agg_bn.running_mean);
    reg.add_stats("agg_bn.running_var", &agg_bn.running_var);
    if (mca) mca->collect("mca", reg);
    if (expand) expand->collect("expand", reg);
    if (diff_attn) diff_attn->collect("diff_attn", reg);
    if (asp) asp->collect("asp", reg);
    head.collect("head", reg);
    return reg;
}

Model build_improved(const ModelConfig& cfg, std::uint64_t seed) {
    return Model(cfg, Arch::Improved, seed);
}

Model build_baseline(const ModelConfig& cfg, std::uint64_t seed) {
    return Model(cfg, Arch::Baseline, seed);
}

namespace {

std::string join3(const std::array<int, 3>& a) {
    std::ostringstream os;
    os << a[0] << "," << a[1] << "," << a[2];
    return os.str();
}

std::array<int, 3> parse3(const std::string& s) {
    std::array<int, 3> out{};
    std::istringstream is(s);
    std::string tok;
    for (int i = 0; i < 3; ++i) {
        if (!std::getline(is, tok, ',')) throw ConfigInvalid("expected three integers: " + s);
        out[static_cast<size_t>(i)] = std::stoi(tok);
    }
    return out;
}

}  // namespace

std::string config_to_text(const ModelConfig& cfg, Arch arch) {
    std::ostringstream os;
    os << "arch = " << (arch == Arch::Improved ? "improved" : "baseline") << "\n"
       << "coeffs = " << cfg.input_coeffs << "\n"
       << "channels = " << cfg.channels << "\n"
       << "classes = " << cfg.num_classes << "\n"
       << "block_dilations = " << join3(cfg.block_dilations) << "\n"
       << "mca_dilations = " << join3(cfg.mca_dilations) << "\n"
       << "reduction = " << cfg.reduction << "\n"
       << "res2_scale = " << cfg.res2_scale << "\n"
       << "heads = " << cfg.heads << "\n"
       << "use_mca = " << (cfg.use_mca ? "true" : "false") << "\n"
       << "use_rse = " << (cfg.use_rse ? "true" : "false") << "\n"
       << "use_diff_attn = " << (cfg.use_diff_attn ? "true" : "false") << "\n"
       << "frames = " << cfg.target_frames << "\n";
    return os.str();
}

std::pair<ModelConfig, Arch> config_from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigInvalid("bad config line: " + line);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    auto boolean = [](const std::string& v) {
        if (v == "true") return true;
        if (v == "false") return false;
        throw ConfigInvalid("expected true/false, got " + v);
    };
    ModelConfig cfg;
    Arch arch = Arch::Improved;
    for (const auto& [key, value] : kv) {
        if (key == "arch") {
            if (value == "improved") arch = Arch::Improved;
            else if (value == "baseline") arch = Arch::Baseline;
            else throw ConfigInvalid("unknown arch: " + value);
        } else if (key == "coeffs") cfg.input_coeffs = std::stoi(value);
        else if (key == "channels") cfg.channels = std::stoi(value);
        else if (key == "classes") cfg.num_classes = std::stoi(value);
        else if (key == "block_dilations") cfg.block_dilations = parse3(value);
        else if (key == "mca_dilations") cfg.mca_dilations = parse3(value);
        else if (key == "reduction") cfg.reduction = std::stoi(value);
        else if (key == "res2_scale") cfg.res2_scale = std::stoi(value);
        else if (key == "heads") cfg.heads = std::stoi(value);
        else if (key == "use_mca") cfg.use_mca = boolean(value);
        else if (key == "use_rse") cfg.use_rse = boolean(value);
        else if (key == "use_diff_attn") cfg.use_diff_attn = boolean(value);
        else if (key == "frames") cfg.target_frames = std::stoi(value);
        else throw ConfigInvalid("unknown config key: " + key);
    }
    return {cfg, arch};
}

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

void write_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff)};
    out.write(reinterpret_cast<char*>(b), 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<char*>(b), 4);
}

std::uint16_t read_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw CorruptCheckpoint("unexpected end of file");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CorruptCheckpoint("unexpected end of file");
    return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_doubles(std::ostream& out, const double* v, size_t n) {
    out.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * 8));
}

void read_doubles(std::istream& in, double* v, size_t n) {
    in.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * 8));
    if (static_cast<size_t>(in.gcount()) != n * 8)
        throw CorruptCheckpoint("tensor payload truncated");
}

}  // namespace

void checkpoint_save(Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileNotFound("cannot open for writing: " + path);
    out.write("CRYM", 4);
    write_u16(out, kCheckpointVersion);
    const std::string cfg = config_to_text(model.config(), model.arch());
    write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    ParamRegistry reg = model.registry();
    write_u32(out, static_cast<std::uint32_t>(reg.params.size() + reg.stats.size()));
    for (auto& [name, t] : reg.params) {
        out.put(0);
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
        write_doubles(out, t.data().data(), t.data().size());
    }
    for (auto& [name, v] : reg.stats) {
        out.put(1);
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, 1);
        write_u32(out, static_cast<std::uint32_t>(v->size()));
        write_doubles(out, v->data(), v->size());
    }
}

Model checkpoint_load(const std::string& path) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound(path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "CRYM", 4) != 0)
        throw CorruptCheckpoint("bad checkpoint magic");
    const std::uint16_t version = read_u16(in);
    if (version != kCheckpointVersion)
        throw VersionMismatch("checkpoint version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointVersion));
    const std::uint32_t cfg_len = read_u32(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    if (static_cast<std::uint32_t>(in.gcount()) != cfg_len)
        throw CorruptCheckpoint("config block truncated");
    auto [cfg, arch] = config_from_text(cfg_text);

    Model model(cfg, arch, 0);
    ParamRegistry reg = model.registry();

    const std::uint32_t entries = read_u32(in);
    std::uint32_t seen = 0;
    for (std::uint32_t e = 0; e < entries; ++e) {
        const int kind = in.get();
        if (kind != 0 && kind != 1) throw CorruptCheckpoint("bad entry kind");
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (static_cast<std::uint32_t>(in.gcount()) != name_len)
            throw CorruptCheckpoint("entry name truncated");
        const std::uint32_t rank = read_u32(in);
        long long numel = 1;
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<int>(read_u32(in)));
            numel *= shape.back();
        }
        if (kind == 0) {
            Tensor* target = nullptr;
            for (auto& [pname, t] : reg.params)
                if (pname == name) target = &t;
            if (!target) throw CorruptCheckpoint("unknown parameter: " + name);
            if (target->shape() != shape)
                throw CorruptCheckpoint("shape mismatch for parameter: " + name);
            read_doubles(in, target->data().data(), target->data().size());
        } else {
            std::vector<double>* target = nullptr;
            for (auto& [sname, v] : reg.stats)
                if (sname == name) target = v;
            if (!target) throw CorruptCheckpoint("unknown running stat: " + name);
            if (static_cast<long long>(target->size()) != numel)
                throw CorruptCheckpoint("shape mismatch for running stat: " + name);
            read_doubles(in, target->data(), target->size());
        }
        ++seen;
    }
    if (seen != reg.params.size() + reg.stats.size())
        throw CorruptCheckpoint("checkpoint is missing tensors for this architecture");
    return model;
}

}  // namespace crynet
