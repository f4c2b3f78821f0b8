#include "crynet/config.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace crynet {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    const auto b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

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
        out[static_cast<size_t>(i)] = std::stoi(trim(tok));
    }
    std::string extra;
    if (std::getline(is, extra, ',')) throw ConfigInvalid("expected exactly three integers: " + s);
    return out;
}

bool parse_bool(const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigInvalid("expected true/false, got '" + v + "'");
}

}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigInvalid("line " + std::to_string(lineno) + " is not 'key = value'");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        try {
            if (key == "arch") {
                if (value == "improved") cfg.arch = Arch::Improved;
                else if (value == "baseline") cfg.arch = Arch::Baseline;
                else throw ConfigInvalid("arch must be improved or baseline");
            } else if (key == "coeffs") cfg.model.input_coeffs = std::stoi(value);
            else if (key == "channels") cfg.model.channels = std::stoi(value);
            else if (key == "classes") cfg.model.num_classes = std::stoi(value);
            else if (key == "block_dilations") cfg.model.block_dilations = parse3(value);
            else if (key == "mca_dilations") cfg.model.mca_dilations = parse3(value);
            else if (key == "reduction") cfg.model.reduction = std::stoi(value);
            else if (key == "res2_scale") cfg.model.res2_scale = std::stoi(value);
            else if (key == "heads") cfg.model.heads = std::stoi(value);
            else if (key == "use_mca") cfg.model.use_mca = parse_bool(value);
            else if (key == "use_rse") cfg.model.use_rse = parse_bool(value);
            else if (key == "use_diff_attn") cfg.model.use_diff_attn = parse_bool(value);
            else if (key == "frames") cfg.model.target_frames = std::stoi(value);
            else if (key == "lr") cfg.lr = std::stod(value);
            else if (key == "epochs") cfg.epochs = std::stoi(value);
            else if (key == "batch") cfg.batch = std::stoi(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "target_seconds") cfg.target_seconds = std::stod(value);
            else if (key == "silence_threshold_db") cfg.silence_threshold_db = std::stod(value);
            else if (key == "silence_window_s") cfg.silence_window_s = std::stod(value);
            else if (key == "sample_rate") cfg.sample_rate = std::stoi(value);
            else if (key == "n_mels") cfg.n_mels = std::stoi(value);
            else if (key == "data_root") cfg.data_root = value;
            else if (key == "cache_dir") cfg.cache_dir = value;
            else throw ConfigInvalid("unknown config key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw ConfigInvalid("bad value for '" + key + "': " + value);
        } catch (const std::out_of_range&) {
            throw ConfigInvalid("value out of range for '" + key + "': " + value);
        }
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound("config file not found: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "arch = " << (arch == Arch::Improved ? "improved" : "baseline") << "\n"
       << "coeffs = " << model.input_coeffs << "\n"
       << "channels = " << model.channels << "\n"
       << "classes = " << model.num_classes << "\n"
       << "block_dilations = " << join3(model.block_dilations) << "\n"
       << "mca_dilations = " << join3(model.mca_dilations) << "\n"
       << "reduction = " << model.reduction << "\n"
       << "res2_scale = " << model.res2_scale << "\n"
       << "heads = " << model.heads << "\n"
       << "use_mca = " << (model.use_mca ? "true" : "false") << "\n"
       << "use_rse = " << (model.use_rse ? "true" : "false") << "\n"
       << "use_diff_attn = " << (model.use_diff_attn ? "true" : "false") << "\n"
       << "frames = " << model.target_frames << "\n"
       << "lr = " << lr << "\n"
       << "epochs = " << epochs << "\n"
       << "batch = " << batch << "\n"
       << "seed = " << seed << "\n"
       << "target_seconds = " << target_seconds << "\n"
       << "silence_threshold_db = " << silence_threshold_db << "\n"
       << "silence_window_s = " << silence_window_s << "\n"
       << "sample_rate = " << sample_rate << "\n"
       << "n_mels = " << n_mels << "\n"
       << "data_root = " << data_root << "\n"
       << "cache_dir = " << cache_dir << "\n";
    return os.str();
}

}  // namespace crynet
