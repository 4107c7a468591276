#include "estoisep/run_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "estoisep/octave.hpp"

namespace estoisep {

namespace {

using KvMap = std::map<std::string, std::string>;  // "section.key" -> raw value text

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

KvMap parse_toml_subset(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");
        kv[section.empty() ? key : section + "." + key] = value;
    }
    return kv;
}

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

std::vector<std::string> parse_string_array(const std::string& v) {
    const std::string body = trim(v);
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
        throw std::invalid_argument("config: expected [\"a\", \"b\"] array, got: " + v);
    std::vector<std::string> out;
    std::string item;
    bool in_string = false;
    for (std::size_t i = 1; i + 1 < body.size(); ++i) {
        const char c = body[i];
        if (c == '"') {
            in_string = !in_string;
            continue;
        }
        if (c == ',' && !in_string) {
            const std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
            item.clear();
            continue;
        }
        if (in_string) item += c;
    }
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
    return out;
}

struct Reader {
    const KvMap& kv;

    bool has(const std::string& key) const { return kv.count(key) > 0; }

    void get(const std::string& key, int& out) const {
        if (!has(key)) return;
        out = std::stoi(kv.at(key));
    }
    void get(const std::string& key, double& out) const {
        if (!has(key)) return;
        out = std::stod(kv.at(key));
    }
    void get(const std::string& key, std::uint64_t& out) const {
        if (!has(key)) return;
        out = std::stoull(kv.at(key));
    }
    void get(const std::string& key, bool& out) const {
        if (!has(key)) return;
        const std::string v = kv.at(key);
        if (v == "true") out = true;
        else if (v == "false") out = false;
        else throw std::invalid_argument("config: " + key + " must be true or false");
    }
    void get(const std::string& key, std::string& out) const {
        if (!has(key)) return;
        out = unquote(kv.at(key));
    }
    void get(const std::string& key, std::vector<std::string>& out) const {
        if (!has(key)) return;
        out = parse_string_array(kv.at(key));
    }
};

}  // namespace

RunConfig RunConfig::from_text(const std::string& text,
                               const std::vector<std::string>& overrides) {
    KvMap kv = parse_toml_subset(text);
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("override must be section.key=value: " + ov);
        kv[trim(ov.substr(0, eq))] = trim(ov.substr(eq + 1));
    }

    RunConfig cfg;
    Reader r{kv};
    r.get("stft.window_length", cfg.stft.window_length);
    r.get("stft.hop", cfg.stft.hop);
    cfg.stft.fft_size = cfg.stft.window_length;
    r.get("stft.fft_size", cfg.stft.fft_size);
    r.get("stft.sample_rate", cfg.stft.sample_rate);

    r.get("bands.lowest_center_hz", cfg.bands_lowest_center);
    r.get("bands.max_freq_hz", cfg.bands_max_freq);
    r.get("loss.segment_ms", cfg.loss_segment_ms);
    r.get("loss.epsilon", cfg.loss_epsilon);

    r.get("model.hidden_layers", cfg.model.num_layers);
    r.get("model.hidden_size", cfg.model.hidden_dim);
    r.get("model.sequence_length", cfg.model.sequence_length);

    std::string regime = regime_to_string(cfg.training.regime);
    r.get("training.regime", regime);
    cfg.training.regime = regime_from_string(regime);
    r.get("training.alpha", cfg.training.alpha);
    r.get("training.max_epochs", cfg.training.max_epochs);
    r.get("training.patience", cfg.training.patience);
    r.get("training.batch_size", cfg.training.batch_size);
    r.get("training.seed", cfg.training.seed);
    r.get("training.learning_rate", cfg.training.learning_rate);
    r.get("training.grad_clip_norm", cfg.training.grad_clip_norm);
    r.get("training.keep_optimizer_state", cfg.training.keep_optimizer_state);
    r.get("training.max_sequences_per_epoch", cfg.training.max_sequences_per_epoch);
    r.get("training.shifts", cfg.augmentation_shifts);

    r.get("data.manifest", cfg.manifest_path);
    r.get("data.speaker_a", cfg.speaker_a);
    r.get("data.speaker_b", cfg.speaker_b);
    r.get("data.train_groups", cfg.splits.train_groups);
    r.get("data.val_groups", cfg.splits.validation_groups);
    r.get("data.test_groups", cfg.splits.test_groups);

    r.get("eval.bss_filter_len", cfg.bss_filter_len);
    r.get("eval.standard_estoi", cfg.standard_estoi);
    return cfg;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str(), overrides);
}

EstoiLossConfig RunConfig::make_loss_config() const {
    EstoiLossConfig loss;
    loss.band_config =
        make_band_config(stft.sample_rate, stft.fft_size, bands_lowest_center, bands_max_freq);
    loss.segment_frames = static_cast<int>(
        std::lround(loss_segment_ms / 1000.0 * stft.sample_rate / stft.hop));
    loss.epsilon = loss_epsilon;
    loss.validate();
    return loss;
}

void RunConfig::validate_modules() const {
    stft.validate();
    make_loss_config();
    training.validate();
    if (model.num_layers < 1 || model.hidden_dim < 1 || model.sequence_length < 1)
        throw std::invalid_argument("config: model dimensions must be positive");
    if (augmentation_shifts < 1)
        throw std::invalid_argument("config: training.shifts must be >= 1");
}

std::string RunConfig::to_toml() const {
    std::ostringstream out;
    out << "[stft]\n"
        << "window_length = " << stft.window_length << "\n"
        << "hop = " << stft.hop << "\n"
        << "fft_size = " << stft.fft_size << "\n"
        << "sample_rate = " << stft.sample_rate << "\n\n";
    out << "[bands]\n"
        << "lowest_center_hz = " << bands_lowest_center << "\n"
        << "max_freq_hz = " << bands_max_freq << "\n\n";
    out << "[loss]\n"
        << "segment_ms = " << loss_segment_ms << "\n"
        << "epsilon = " << loss_epsilon << "\n\n";
    out << "[model]\n"
        << "hidden_layers = " << model.num_layers << "\n"
        << "hidden_size = " << model.hidden_dim << "\n"
        << "sequence_length = " << model.sequence_length << "\n\n";
    out << "[training]\n"
        << "regime = \"" << regime_to_string(training.regime) << "\"\n"
        << "alpha = " << training.alpha << "\n"
        << "max_epochs = " << training.max_epochs << "\n"
        << "patience = " << training.patience << "\n"
        << "batch_size = " << training.batch_size << "\n"
        << "seed = " << training.seed << "\n"
        << "learning_rate = " << training.learning_rate << "\n"
        << "grad_clip_norm = " << training.grad_clip_norm << "\n"
        << "keep_optimizer_state = " << (training.keep_optimizer_state ? "true" : "false") << "\n"
        << "max_sequences_per_epoch = " << training.max_sequences_per_epoch << "\n"
        << "shifts = " << augmentation_shifts << "\n\n";
    auto arr = [](const std::vector<std::string>& v) {
        std::string s = "[";
        for (std::size_t i = 0; i < v.size(); ++i) {
            s += "\"" + v[i] + "\"";
            if (i + 1 < v.size()) s += ", ";
        }
        return s + "]";
    };
    out << "[data]\n"
        << "manifest = \"" << manifest_path << "\"\n"
        << "speaker_a = \"" << speaker_a << "\"\n"
        << "speaker_b = \"" << speaker_b << "\"\n"
        << "train_groups = " << arr(splits.train_groups) << "\n"
        << "val_groups = " << arr(splits.validation_groups) << "\n"
        << "test_groups = " << arr(splits.test_groups) << "\n\n";
    out << "[eval]\n"
        << "bss_filter_len = " << bss_filter_len << "\n"
        << "standard_estoi = " << (standard_estoi ? "true" : "false") << "\n";
    return out.str();
}

}  // namespace estoisep
