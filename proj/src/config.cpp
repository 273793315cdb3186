#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dex/errors.hpp"
#include "dex/pipeline.hpp"

namespace dex::pipeline {

namespace {

template <class Config, class F>
void visit_fields(Config& c, F&& f) {
    f("profile", c.profile);
    f("mode", c.mode);
    f("mel_bins", c.mel_bins);
    f("n_fft", c.n_fft);
    f("hop", c.hop);
    f("win", c.win);
    f("sample_rate", c.sample_rate);
    f("vocab", c.vocab);
    f("text_layers", c.text_layers);
    f("text_hidden", c.text_hidden);
    f("text_heads", c.text_heads);
    f("tiv_layers", c.tiv_layers);
    f("tv_layers", c.tv_layers);
    f("codebook_size", c.codebook_size);
    f("code_dim", c.code_dim);
    f("style_kernel", c.style_kernel);
    f("ema_decay", c.ema_decay);
    f("channels", c.channels);
    f("patch", c.patch);
    f("dit_blocks", c.dit_blocks);
    f("dit_heads", c.dit_heads);
    f("mlp_ratio", c.mlp_ratio);
    f("embed", c.embed);
    f("overlap", c.overlap);
    f("max_frames", c.max_frames);
    f("dp_channels", c.dp_channels);
    f("sigma_min", c.sigma_min);
    f("sigma_max", c.sigma_max);
    f("rho", c.rho);
    f("sigma_data", c.sigma_data);
    f("p_mean", c.p_mean);
    f("p_std", c.p_std);
    f("lr", c.lr);
    f("batch", c.batch);
    f("epochs", c.epochs);
    f("grad_clip", c.grad_clip);
    f("beta_vq", c.beta_vq);
    f("checkpoint_every", c.checkpoint_every);
    f("seed", c.seed);
    f("n_utts", c.n_utts);
    f("t_min", c.t_min);
    f("t_max", c.t_max);
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
    return s;
}

std::string format_double(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

void assign(const std::string&, const std::string& raw, std::string& field) { field = unquote(raw); }
void assign(const std::string&, const std::string& raw, Mode& field) { field = mode_from_string(unquote(raw)); }
void assign(const std::string&, const std::string& raw, decoder::EmbedKind& field) {
    field = decoder::embed_kind_from_string(unquote(raw));
}
void assign(const std::string& key, const std::string& raw, bool& field) {
    if (raw == "true" || raw == "1") field = true;
    else if (raw == "false" || raw == "0") field = false;
    else throw ConfigError("config: " + key + " expects true or false, got '" + raw + "'");
}
void assign(const std::string& key, const std::string& raw, std::size_t& field) {
    const auto r = std::from_chars(raw.data(), raw.data() + raw.size(), field);
    if (r.ec != std::errc{} || r.ptr != raw.data() + raw.size()) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + raw + "'");
    }
}
void assign(const std::string& key, const std::string& raw, double& field) {
    const auto r = std::from_chars(raw.data(), raw.data() + raw.size(), field);
    if (r.ec != std::errc{} || r.ptr != raw.data() + raw.size()) {
        throw ConfigError("config: " + key + " expects a number, got '" + raw + "'");
    }
}

std::string render(const std::string& v) { return v; }
std::string render(Mode v) { return to_string(v); }
std::string render(decoder::EmbedKind v) { return decoder::to_string(v); }
std::string render(bool v) { return v ? "true" : "false"; }
std::string render(std::size_t v) { return std::to_string(v); }
std::string render(double v) { return format_double(v); }

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::dex ? "dex" : "gedex"; }

Mode mode_from_string(const std::string& name) {
    if (name == "dex") return Mode::dex;
    if (name == "gedex") return Mode::gedex;
    throw ConfigError("unknown mode '" + name + "' (dex|gedex)");
}

void ModelConfig::validate() const {
    if (mel_bins == 0 || vocab == 0) throw ConfigError("config: mel_bins and vocab must be positive");
    if (hop == 0 || sample_rate == 0) throw ConfigError("config: hop and sample_rate must be positive");
    if (batch == 0) throw ConfigError("config: batch must be positive");
    if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
    if (!(grad_clip >= 0.0)) throw ConfigError("config: grad_clip must be non-negative");
    if (!(beta_vq >= 0.0)) throw ConfigError("config: beta_vq must be non-negative");
    if (t_min == 0 || t_min > t_max) throw ConfigError("config: need 0 < t_min <= t_max");
    text_config().validate();
    if (mode == Mode::dex) style_config().validate();
    decoder_config().validate();
    schedule().validate();
}

text::TextEncoderConfig ModelConfig::text_config() const {
    text::TextEncoderConfig c;
    c.vocab = vocab;
    c.layers = text_layers;
    c.hidden = text_hidden;
    c.heads = text_heads;
    c.style_dim = mode == Mode::dex ? channels : 0;
    return c;
}

styles::StyleConfig ModelConfig::style_config() const {
    styles::StyleConfig c;
    c.mel_bins = mel_bins;
    c.channels = channels;
    c.tiv_layers = tiv_layers;
    c.tv_layers = tv_layers;
    c.codebook_size = codebook_size;
    c.code_dim = code_dim;
    c.kernel = style_kernel;
    c.ema_decay = ema_decay;
    return c;
}

decoder::DecoderConfig ModelConfig::decoder_config() const {
    decoder::DecoderConfig c;
    c.mel_bins = mel_bins;
    c.channels = channels;
    c.patch = patch;
    c.dit_blocks = dit_blocks;
    c.dit_heads = dit_heads;
    c.mlp_ratio = mlp_ratio;
    c.style_dim = code_dim;
    c.embed = embed;
    c.overlap = overlap;
    c.max_frames = max_frames;
    c.use_styles = mode == Mode::dex;
    return c;
}

decoder::NoiseSchedule ModelConfig::schedule() const {
    return {sigma_min, sigma_max, rho, sigma_data, p_mean, p_std};
}

std::vector<std::string> profile_names() { return {"toy", "toy-gedex", "paper-default", "gedex"}; }

ModelConfig profile_config(const std::string& name) {
    ModelConfig c;
    if (name == "toy") return c;
    if (name == "toy-gedex") {
        c.profile = name;
        c.mode = Mode::gedex;
        c.patch = 4;
        return c;
    }
    if (name == "paper-default" || name == "gedex") {
        c.profile = name;
        c.mel_bins = 80;
        c.n_fft = 1024;
        c.hop = 256;
        c.win = 1024;
        c.sample_rate = 22050;
        c.text_layers = 8;
        c.text_hidden = 192;
        c.text_heads = 2;
        c.tiv_layers = 6;
        c.tv_layers = 3;
        c.codebook_size = 512;
        c.code_dim = 192;
        c.channels = 64;
        c.patch = 2;
        c.dit_blocks = 4;
        c.dit_heads = 2;
        c.mlp_ratio = 4;
        c.max_frames = 1000;
        c.dp_channels = 256;
        c.lr = 1e-4;
        c.batch = 32;
        c.epochs = 1000;
        c.n_utts = 64;
        c.t_min = 100;
        c.t_max = 400;
        if (name == "gedex") {
            c.mode = Mode::gedex;
            c.patch = 4;
        }
        return c;
    }
    throw ConfigError("unknown profile '" + name + "'");
}

ModelConfig parse_config(const std::string& text) {
    ModelConfig c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "profile") {
            if (!first) throw ConfigError("config: profile must be the first key");
            c = profile_config(unquote(value));
            first = false;
            continue;
        }
        first = false;
        bool found = false;
        visit_fields(c, [&](const char* name, auto& field) {
            if (key == name) {
                assign(key, value, field);
                found = true;
            }
        });
        if (!found) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    c.validate();
    return c;
}

ModelConfig load_config(const std::string& name_or_path) {
    for (const auto& p : profile_names())
        if (p == name_or_path) return profile_config(p);
    std::ifstream f(name_or_path);
    if (!f) throw InputError("cannot open config '" + name_or_path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string to_key_values(const ModelConfig& config) {
    std::ostringstream os;
    visit_fields(config, [&](const char* name, const auto& field) { os << name << " = " << render(field) << '\n'; });
    return os.str();
}

std::string to_json(const ModelConfig& config) {
    nlohmann::json j = nlohmann::json::object();
    visit_fields(config, [&](const char* name, const auto& field) {
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, Mode> || std::is_same_v<T, decoder::EmbedKind>) j[name] = render(field);
        else j[name] = field;
    });
    return j.dump();
}

ModelConfig from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("config JSON: ") + e.what());
    }
    ModelConfig c;
    visit_fields(c, [&](const char* name, auto& field) {
        using T = std::decay_t<decltype(field)>;
        if (!j.contains(name)) throw InputError(std::string("config JSON: missing ") + name);
        if constexpr (std::is_same_v<T, Mode>) field = mode_from_string(j[name].get<std::string>());
        else if constexpr (std::is_same_v<T, decoder::EmbedKind>)
            field = decoder::embed_kind_from_string(j[name].get<std::string>());
        else field = j[name].get<T>();
    });
    c.validate();
    return c;
}

}  // namespace dex::pipeline
