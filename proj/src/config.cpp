#include "admc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "admc/hash.hpp"

namespace admc {
namespace {

std::string fmt_i64(int64_t v) { return std::to_string(v); }
std::string fmt_u64(uint64_t v) { return std::to_string(v); }

// Shortest decimal that round-trips to the same double.
std::string fmt_f64(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

int64_t parse_i64(const std::string& key, const std::string& text) {
    int64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size())
        raise(ErrorCategory::Config, "config: '" + key + "' expects an integer, got '" + text + "'");
    return v;
}

uint64_t parse_u64(const std::string& key, const std::string& text) {
    uint64_t v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size())
        raise(ErrorCategory::Config,
              "config: '" + key + "' expects a non-negative integer, got '" + text + "'");
    return v;
}

double parse_f64(const std::string& key, const std::string& text) {
    double v = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || p != text.data() + text.size())
        raise(ErrorCategory::Config, "config: '" + key + "' expects a number, got '" + text + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    raise(ErrorCategory::Config, "config: '" + key + "' expects true/false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : text) {
        if (ch == ',') {
            parts.push_back(cur);
            cur.clear();
        } else if (!isspace(static_cast<unsigned char>(ch))) {
            cur += ch;
        }
    }
    parts.push_back(cur);
    return parts;
}

using Getter = std::function<std::string(const RunConfig&)>;
using Setter = std::function<void(RunConfig&, const std::string&)>;

struct FieldBinding {
    std::string key; // "section.name"
    Getter get;
    Setter set;
};

FieldBinding bind_i64(std::string key, std::function<int64_t&(RunConfig&)> ref) {
    return {key,
            [ref](const RunConfig& c) { return fmt_i64(ref(const_cast<RunConfig&>(c))); },
            [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_i64(key, v); }};
}

FieldBinding bind_u64(std::string key, std::function<uint64_t&(RunConfig&)> ref) {
    return {key,
            [ref](const RunConfig& c) { return fmt_u64(ref(const_cast<RunConfig&>(c))); },
            [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_u64(key, v); }};
}

FieldBinding bind_f64(std::string key, std::function<double&(RunConfig&)> ref) {
    return {key,
            [ref](const RunConfig& c) { return fmt_f64(ref(const_cast<RunConfig&>(c))); },
            [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_f64(key, v); }};
}

FieldBinding bind_bool(std::string key, std::function<bool&(RunConfig&)> ref) {
    return {key,
            [ref](const RunConfig& c) {
                return ref(const_cast<RunConfig&>(c)) ? std::string("true") : std::string("false");
            },
            [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}

FieldBinding bind_f64_list(std::string key, std::function<std::vector<double>&(RunConfig&)> ref) {
    return {key,
            [ref](const RunConfig& c) {
                std::string out;
                for (double v : ref(const_cast<RunConfig&>(c))) {
                    if (!out.empty()) out += ",";
                    out += fmt_f64(v);
                }
                return out;
            },
            [key, ref](RunConfig& c, const std::string& v) {
                std::vector<double> vals;
                for (const std::string& p : split_list(v)) vals.push_back(parse_f64(key, p));
                ref(c) = std::move(vals);
            }};
}

FieldBinding bind_i64_list(std::string key, std::function<std::vector<int64_t>&(RunConfig&)> ref) {
    return {key,
            [ref](const RunConfig& c) {
                std::string out;
                for (int64_t v : ref(const_cast<RunConfig&>(c))) {
                    if (!out.empty()) out += ",";
                    out += fmt_i64(v);
                }
                return out;
            },
            [key, ref](RunConfig& c, const std::string& v) {
                std::vector<int64_t> vals;
                for (const std::string& p : split_list(v)) vals.push_back(parse_i64(key, p));
                ref(c) = std::move(vals);
            }};
}

const std::vector<FieldBinding>& bindings() {
    auto modality_fields = [](std::vector<FieldBinding>& out, const std::string& name,
                              std::function<ModalitySpec&(RunConfig&)> ref) {
        out.push_back(bind_i64("data." + name + "_dim",
                               [ref](RunConfig& c) -> int64_t& { return ref(c).frame_dim; }));
        out.push_back(bind_i64("data." + name + "_min_len",
                               [ref](RunConfig& c) -> int64_t& { return ref(c).min_len; }));
        out.push_back(bind_i64("data." + name + "_max_len",
                               [ref](RunConfig& c) -> int64_t& { return ref(c).max_len; }));
    };

    static const std::vector<FieldBinding> table = [&] {
        std::vector<FieldBinding> t;
        t.push_back(bind_i64("data.classes", [](RunConfig& c) -> int64_t& { return c.data.num_classes; }));
        t.push_back(bind_i64("data.train_samples", [](RunConfig& c) -> int64_t& { return c.data.train_samples; }));
        t.push_back(bind_i64("data.val_samples", [](RunConfig& c) -> int64_t& { return c.data.val_samples; }));
        t.push_back(bind_i64("data.test_samples", [](RunConfig& c) -> int64_t& { return c.data.test_samples; }));
        modality_fields(t, "text", [](RunConfig& c) -> ModalitySpec& { return c.data.text; });
        modality_fields(t, "visual", [](RunConfig& c) -> ModalitySpec& { return c.data.visual; });
        modality_fields(t, "acoustic", [](RunConfig& c) -> ModalitySpec& { return c.data.acoustic; });
        t.push_back(bind_f64("data.centroid_scale", [](RunConfig& c) -> double& { return c.data.centroid_scale; }));
        t.push_back(bind_f64("data.latent_noise", [](RunConfig& c) -> double& { return c.data.latent_noise; }));
        t.push_back(bind_f64("data.feature_noise", [](RunConfig& c) -> double& { return c.data.feature_noise; }));
        t.push_back(bind_f64("data.jitter_drift", [](RunConfig& c) -> double& { return c.data.jitter_drift; }));
        t.push_back(bind_f64("data.jitter_wave", [](RunConfig& c) -> double& { return c.data.jitter_wave; }));
        t.push_back(bind_f64("data.weak_axis_gain", [](RunConfig& c) -> double& { return c.data.weak_axis_gain; }));
        t.push_back(bind_i64("data.latent_dim", [](RunConfig& c) -> int64_t& { return c.data.latent_dim; }));
        t.push_back(bind_u64("data.seed", [](RunConfig& c) -> uint64_t& { return c.data.seed; }));

        t.push_back(bind_i64("itfn.encoder_width", [](RunConfig& c) -> int64_t& { return c.itfn.encoder_width; }));
        t.push_back(bind_i64("itfn.head_hidden", [](RunConfig& c) -> int64_t& { return c.itfn.head_hidden; }));
        t.push_back(bind_i64("itfn.batch_size", [](RunConfig& c) -> int64_t& { return c.itfn.batch_size; }));
        t.push_back(bind_i64("itfn.max_epochs", [](RunConfig& c) -> int64_t& { return c.itfn.max_epochs; }));
        t.push_back(bind_i64("itfn.patience", [](RunConfig& c) -> int64_t& { return c.itfn.patience; }));
        t.push_back(bind_f64("itfn.lr", [](RunConfig& c) -> double& { return c.itfn.lr; }));
        t.push_back(bind_f64("itfn.lr_decay", [](RunConfig& c) -> double& { return c.itfn.lr_decay; }));
        t.push_back(bind_i64("itfn.lr_hold_epochs", [](RunConfig& c) -> int64_t& { return c.itfn.lr_hold_epochs; }));

        t.push_back(bind_i64("schedule.steps", [](RunConfig& c) -> int64_t& { return c.diffusion_steps; }));
        t.push_back(bind_f64("schedule.beta_start", [](RunConfig& c) -> double& { return c.beta_start; }));
        t.push_back(bind_f64("schedule.beta_end", [](RunConfig& c) -> double& { return c.beta_end; }));
        t.push_back({"schedule.posterior",
                     [](const RunConfig& c) {
                         return std::string(c.posterior == PosteriorVariance::Beta ? "beta"
                                                                                   : "beta_tilde");
                     },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "beta") c.posterior = PosteriorVariance::Beta;
                         else if (v == "beta_tilde") c.posterior = PosteriorVariance::BetaTilde;
                         else
                             raise(ErrorCategory::Config,
                                   "config: 'schedule.posterior' expects beta|beta_tilde, got '" +
                                       v + "'");
                     }});
        t.push_back(bind_i64("schedule.start_step", [](RunConfig& c) -> int64_t& { return c.start_step; }));

        t.push_back(bind_i64("adn.model_dim", [](RunConfig& c) -> int64_t& { return c.adn_arch.model_dim; }));
        t.push_back(bind_i64("adn.layers", [](RunConfig& c) -> int64_t& { return c.adn_arch.layers; }));
        t.push_back(bind_i64("adn.heads", [](RunConfig& c) -> int64_t& { return c.adn_arch.heads; }));
        t.push_back(bind_i64("adn.ff_hidden", [](RunConfig& c) -> int64_t& { return c.adn_arch.ff_hidden; }));
        t.push_back(bind_i64("adn.batch_size", [](RunConfig& c) -> int64_t& { return c.adn.batch_size; }));
        t.push_back(bind_i64("adn.max_epochs", [](RunConfig& c) -> int64_t& { return c.adn.max_epochs; }));
        t.push_back(bind_i64("adn.patience", [](RunConfig& c) -> int64_t& { return c.adn.patience; }));
        t.push_back(bind_f64("adn.lr", [](RunConfig& c) -> double& { return c.adn.lr; }));
        t.push_back(bind_f64("adn.lr_decay", [](RunConfig& c) -> double& { return c.adn.lr_decay; }));
        t.push_back(bind_i64("adn.lr_hold_epochs", [](RunConfig& c) -> int64_t& { return c.adn.lr_hold_epochs; }));

        t.push_back(bind_i64("fusion.model_dim", [](RunConfig& c) -> int64_t& { return c.fusion.arch.model_dim; }));
        t.push_back(bind_i64("fusion.layers", [](RunConfig& c) -> int64_t& { return c.fusion.arch.layers; }));
        t.push_back(bind_i64("fusion.heads", [](RunConfig& c) -> int64_t& { return c.fusion.arch.heads; }));
        t.push_back(bind_i64("fusion.ff_hidden", [](RunConfig& c) -> int64_t& { return c.fusion.arch.ff_hidden; }));
        t.push_back(bind_f64("fusion.dropout", [](RunConfig& c) -> double& { return c.fusion.arch.dropout; }));
        t.push_back(bind_i64("fusion.head_hidden", [](RunConfig& c) -> int64_t& { return c.fusion.arch.head_hidden; }));
        t.push_back(bind_i64("fusion.batch_size", [](RunConfig& c) -> int64_t& { return c.fusion.batch_size; }));
        t.push_back(bind_i64("fusion.max_epochs", [](RunConfig& c) -> int64_t& { return c.fusion.max_epochs; }));
        t.push_back(bind_i64("fusion.patience", [](RunConfig& c) -> int64_t& { return c.fusion.patience; }));
        t.push_back(bind_f64("fusion.lr", [](RunConfig& c) -> double& { return c.fusion.lr; }));
        t.push_back(bind_f64("fusion.lr_decay", [](RunConfig& c) -> double& { return c.fusion.lr_decay; }));
        t.push_back(bind_i64("fusion.lr_hold_epochs", [](RunConfig& c) -> int64_t& { return c.fusion.lr_hold_epochs; }));
        t.push_back(bind_bool("fusion.train_enhanced", [](RunConfig& c) -> bool& { return c.train_enhanced; }));

        t.push_back(bind_f64_list("eval.missing_rates",
                                  [](RunConfig& c) -> std::vector<double>& { return c.eval.missing_rates; }));
        t.push_back(bind_i64_list("eval.sweep_start_values", [](RunConfig& c) -> std::vector<int64_t>& {
            return c.eval.sweep_start_values;
        }));
        t.push_back(bind_i64("eval.export_count", [](RunConfig& c) -> int64_t& { return c.eval.export_count; }));
        t.push_back({"eval.export_split",
                     [](const RunConfig& c) { return c.eval.export_split; },
                     [](RunConfig& c, const std::string& v) {
                         if (v != "train" && v != "val" && v != "test")
                             raise(ErrorCategory::Config,
                                   "config: 'eval.export_split' expects train|val|test, got '" + v +
                                       "'");
                         c.eval.export_split = v;
                     }});
        t.push_back({"eval.wa_variant",
                     [](const RunConfig& c) {
                         return std::string(c.eval.wa_variant == WaVariant::SupportWeightedRecall
                                                ? "weighted_recall"
                                                : "literal_mean");
                     },
                     [](RunConfig& c, const std::string& v) {
                         if (v == "weighted_recall") c.eval.wa_variant = WaVariant::SupportWeightedRecall;
                         else if (v == "literal_mean") c.eval.wa_variant = WaVariant::LiteralEquation;
                         else
                             raise(ErrorCategory::Config,
                                   "config: 'eval.wa_variant' expects weighted_recall|literal_mean, "
                                   "got '" + v + "'");
                     }});

        t.push_back(bind_u64("run.seed", [](RunConfig& c) -> uint64_t& { return c.seed; }));
        return t;
    }();
    return table;
}

const FieldBinding* find_binding(const std::string& key) {
    for (const FieldBinding& b : bindings())
        if (b.key == key) return &b;
    return nullptr;
}

std::string section_of(const std::string& key) { return key.substr(0, key.find('.')); }

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

} // namespace

UnimodalTrainConfig RunConfig::itfn_config() const {
    UnimodalTrainConfig c = itfn;
    c.seed = seed;
    return c;
}

DenoiserConfig RunConfig::denoiser_config() const {
    DenoiserConfig c = adn_arch;
    c.feature_dim = itfn.encoder_width;
    c.max_steps = diffusion_steps;
    return c;
}

NoiseSchedule RunConfig::make_schedule() const {
    return NoiseSchedule(static_cast<int>(diffusion_steps), beta_start, beta_end, posterior);
}

AdnTrainConfig RunConfig::adn_config() const {
    AdnTrainConfig c = adn;
    c.seed = seed;
    return c;
}

FusionTrainConfig RunConfig::fusion_config() const {
    FusionTrainConfig c = fusion;
    c.arch.input_width = itfn.encoder_width;
    c.arch.num_classes = data.num_classes;
    c.seed = seed;
    return c;
}

void RunConfig::validate() const {
    data.validate();
    denoiser_config().validate();
    fusion_config().arch.validate();
    if (itfn.encoder_width < 1 || itfn.head_hidden < 1)
        raise(ErrorCategory::Config, "config: itfn widths must be positive");
    auto check_loop = [](const char* stage, int64_t batch, int64_t epochs, int64_t patience) {
        if (batch < 1 || epochs < 1 || patience < 0)
            raise(ErrorCategory::Config,
                  std::string("config: ") + stage + " training loop parameters out of range");
    };
    check_loop("itfn", itfn.batch_size, itfn.max_epochs, itfn.patience);
    check_loop("adn", adn.batch_size, adn.max_epochs, adn.patience);
    check_loop("fusion", fusion.batch_size, fusion.max_epochs, fusion.patience);
    make_schedule(); // validates steps/betas
    if (start_step < 1 || start_step > diffusion_steps)
        raise(ErrorCategory::Config, "config: schedule.start_step must lie in [1, steps]");
    if (eval.missing_rates.empty())
        raise(ErrorCategory::Config, "config: eval.missing_rates must not be empty");
    for (double r : eval.missing_rates)
        if (r < 0.0 || r > 0.5)
            raise(ErrorCategory::Config, "config: eval.missing_rates entries must lie in [0, 0.5]");
    if (eval.sweep_start_values.empty())
        raise(ErrorCategory::Config, "config: eval.sweep_start_values must not be empty");
    for (int64_t n : eval.sweep_start_values)
        if (n < 1 || n > diffusion_steps)
            raise(ErrorCategory::Config,
                  "config: eval.sweep_start_values entries must lie in [1, steps]");
    if (eval.export_count < 1)
        raise(ErrorCategory::Config, "config: eval.export_count must be positive");
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const FieldBinding* b = find_binding(key);
    if (!b) raise(ErrorCategory::Config, "config: unknown key '" + key + "'");
    b->set(*this, value);
}

std::string RunConfig::get(const std::string& key) const {
    const FieldBinding* b = find_binding(key);
    if (!b) raise(ErrorCategory::Config, "config: unknown key '" + key + "'");
    return b->get(*this);
}

std::vector<std::string> RunConfig::keys() {
    std::vector<std::string> out;
    for (const FieldBinding& b : bindings()) out.push_back(b.key);
    return out;
}

std::string RunConfig::canonical_text() const {
    std::string out;
    std::string section;
    for (const FieldBinding& b : bindings()) {
        const std::string s = section_of(b.key);
        if (s != section) {
            if (!out.empty()) out += "\n";
            out += "[" + s + "]\n";
            section = s;
        }
        out += b.key.substr(s.size() + 1) + " = " + b.get(*this) + "\n";
    }
    return out;
}

std::string RunConfig::fingerprint() const { return to_hex(fnv1a64(canonical_text())); }

void apply_config_text(RunConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                raise(ErrorCategory::Format,
                      "config parse: line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            raise(ErrorCategory::Format,
                  "config parse: line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            raise(ErrorCategory::Format,
                  "config parse: line " + std::to_string(lineno) + ": empty key");
        if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
        cfg.set(key, value);
    }
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        raise(ErrorCategory::Config,
              "config: override '" + assignment + "' must look like section.key=value");
    cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCategory::Io, "config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    RunConfig cfg;
    apply_config_text(cfg, buf.str());
    return cfg;
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCategory::Io, "config: cannot open '" + path + "' for writing");
    out << cfg.canonical_text();
    if (!out.flush()) raise(ErrorCategory::Io, "config: write to '" + path + "' failed");
}

} // namespace admc
