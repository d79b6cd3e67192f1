#include "tuplenet/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace tuplenet {

namespace {

struct Value {
    enum class Kind { string, number, boolean, array };
    explicit Value(Kind k = Kind::number) : kind(k) {}
    Kind kind;
    std::string text;
    double number = 0.0;
    bool integral = false;
    bool boolean = false;
    std::vector<Value> items;
};

const char* kind_name(Value::Kind k) {
    switch (k) {
        case Value::Kind::string: return "a string";
        case Value::Kind::number: return "a number";
        case Value::Kind::boolean: return "a boolean";
        case Value::Kind::array: return "an array";
    }
    return "?";
}

struct Where {
    const std::string& source;
    std::size_t line;
    [[noreturn]] void fail(const std::string& what) const { throw ConfigError(source, line, what); }
};

// --- lexing ------------------------------------------------------------------

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::string_view strip_comment(std::string_view s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (in_string && s[i] == '\\') {
            ++i;
        } else if (s[i] == '"') {
            in_string = !in_string;
        } else if (s[i] == '#' && !in_string) {
            return s.substr(0, i);
        }
    }
    return s;
}

class ValueParser {
public:
    ValueParser(std::string_view text, const Where& at) : s_(text), at_(at) {}

    Value parse_all() {
        Value v = parse_value();
        skip_ws();
        if (pos_ != s_.size()) at_.fail("unexpected text after value: '" + std::string(s_.substr(pos_)) + "'");
        return v;
    }

private:
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    Value parse_value() {
        skip_ws();
        if (pos_ >= s_.size()) at_.fail("missing value");
        const char c = s_[pos_];
        if (c == '"') return parse_string();
        if (c == '[') return parse_array();
        if (s_.substr(pos_, 4) == "true") {
            pos_ += 4;
            Value v{Value::Kind::boolean};
            v.boolean = true;
            return v;
        }
        if (s_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return Value{Value::Kind::boolean};
        }
        return parse_number();
    }

    Value parse_string() {
        Value v{Value::Kind::string};
        ++pos_;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            char c = s_[pos_++];
            if (c == '\\') {
                if (pos_ >= s_.size()) break;
                const char e = s_[pos_++];
                switch (e) {
                    case 'n': c = '\n'; break;
                    case 't': c = '\t'; break;
                    case '"': c = '"'; break;
                    case '\\': c = '\\'; break;
                    default: at_.fail(std::string("unsupported escape '\\") + e + "'");
                }
            }
            v.text.push_back(c);
        }
        if (pos_ >= s_.size()) at_.fail("unterminated string");
        ++pos_;
        return v;
    }

    Value parse_array() {
        Value v{Value::Kind::array};
        ++pos_;
        for (;;) {
            skip_ws();
            if (pos_ >= s_.size()) at_.fail("unterminated array");
            if (s_[pos_] == ']') {
                ++pos_;
                return v;
            }
            v.items.push_back(parse_value());
            if (v.items.back().kind == Value::Kind::array) at_.fail("nested arrays are not supported");
            skip_ws();
            if (pos_ < s_.size() && s_[pos_] == ',') ++pos_;
            else if (pos_ < s_.size() && s_[pos_] != ']') at_.fail("expected ',' or ']' in array");
        }
    }

    Value parse_number() {
        std::size_t end = pos_;
        while (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '.' ||
                                   s_[end] == '-' || s_[end] == '+' || s_[end] == '_'))
            ++end;
        std::string tok;
        for (char c : s_.substr(pos_, end - pos_))
            if (c != '_') tok.push_back(c);
        if (tok.empty()) at_.fail("expected a value, got '" + std::string(s_.substr(pos_)) + "'");
        Value v{Value::Kind::number};
        const char* first = tok.data();
        if (*first == '+') ++first;
        const auto res = std::from_chars(first, tok.data() + tok.size(), v.number);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
            at_.fail("'" + tok + "' is not a number, string, boolean or array");
        v.integral = tok.find_first_of(".eE") == std::string::npos;
        pos_ = end;
        return v;
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    const Where& at_;
};

// --- field table -------------------------------------------------------------

struct Field {
    std::string section, key;
    bool numeric = false;
    std::function<void(ExperimentConfig&, const Value&, const Where&)> set;
    std::function<std::string(const ExperimentConfig&)> show;
};

std::string format_double(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    std::string s(buf);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out.push_back(c);
    }
    return out + '"';
}

void expect(const Value& v, Value::Kind kind, const Where& at, const std::string& key) {
    if (v.kind != kind) at.fail("'" + key + "' must be " + kind_name(kind) + ", got " + kind_name(v.kind));
}

template <typename Ref>
Field size_field(std::string section, std::string key, Ref ref) {
    Field f{section, key, true, {}, {}};
    f.set = [key, ref](ExperimentConfig& c, const Value& v, const Where& at) {
        expect(v, Value::Kind::number, at, key);
        if (!v.integral || v.number < 0) at.fail("'" + key + "' must be a non-negative integer");
        ref(c) = static_cast<std::remove_reference_t<decltype(ref(c))>>(v.number);
    };
    f.show = [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); };
    return f;
}

template <typename Ref>
Field double_field(std::string section, std::string key, Ref ref) {
    Field f{section, key, true, {}, {}};
    f.set = [key, ref](ExperimentConfig& c, const Value& v, const Where& at) {
        expect(v, Value::Kind::number, at, key);
        if (!std::isfinite(v.number)) at.fail("'" + key + "' must be finite");
        ref(c) = v.number;
    };
    f.show = [ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); };
    return f;
}

template <typename Ref>
Field bool_field(std::string section, std::string key, Ref ref) {
    Field f{section, key, false, {}, {}};
    f.set = [key, ref](ExperimentConfig& c, const Value& v, const Where& at) {
        expect(v, Value::Kind::boolean, at, key);
        ref(c) = v.boolean;
    };
    f.show = [ref](const ExperimentConfig& c) -> std::string {
        return ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false";
    };
    return f;
}

// Enumerations and free strings: `parse` converts (and validates) the text,
// `print` turns the stored value back into text.
template <typename Ref, typename Parse, typename Print>
Field text_field(std::string section, std::string key, Ref ref, Parse parse, Print print) {
    Field f{section, key, false, {}, {}};
    f.set = [key, ref, parse](ExperimentConfig& c, const Value& v, const Where& at) {
        expect(v, Value::Kind::string, at, key);
        try {
            ref(c) = parse(v.text);
        } catch (const InvalidArgument& e) {
            at.fail(e.what());
        }
    };
    f.show = [ref, print](const ExperimentConfig& c) { return quote(print(ref(const_cast<ExperimentConfig&>(c)))); };
    return f;
}

std::string parse_scheme(const std::string& s) {
    if (s != "cae" && s != "cte" && s != "sce") throw InvalidArgument("unknown scheme '" + s + "' (expected cae, cte or sce)");
    return s;
}

const char* tuple_loss_name(TupleLoss l) { return l == TupleLoss::softmax_nll ? "softmax" : "hinge"; }

ConvSpec& layer2(ExperimentConfig& c) {
    if (!c.train.model.layer2) c.train.model.layer2 = ConvSpec{4, 10, 1, Activation::tanh};
    return *c.train.model.layer2;
}

const std::vector<Field>& fields() {
    using C = ExperimentConfig;
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        const auto same = [](const std::string& s) { return s; };
        const auto act = [](const std::string& s) { return activation_from_string(s); };
        const auto act_name = [](Activation a) { return std::string(to_string(a)); };

        t.push_back(size_field("", "seed", [](C& c) -> std::uint64_t& { return c.seed; }));

        t.push_back(text_field("dataset", "path", [](C& c) -> std::string& { return c.dataset.path; }, same, same));
        t.push_back(size_field("dataset", "subjects", [](C& c) -> std::size_t& { return c.dataset.synth.n_subjects; }));
        t.push_back(size_field("dataset", "classes", [](C& c) -> std::size_t& { return c.dataset.synth.n_classes; }));
        t.push_back(size_field("dataset", "channels", [](C& c) -> std::size_t& { return c.dataset.synth.channels; }));
        t.push_back(size_field("dataset", "samples", [](C& c) -> std::size_t& { return c.dataset.synth.samples; }));
        t.push_back(size_field("dataset", "blocks", [](C& c) -> std::size_t& { return c.dataset.synth.blocks; }));
        t.push_back(double_field("dataset", "snr", [](C& c) -> double& { return c.dataset.synth.snr; }));
        t.push_back(double_field("dataset", "sample_rate", [](C& c) -> double& { return c.dataset.synth.sample_rate; }));
        {
            Field f{"dataset", "test_block", true, {}, {}};
            f.set = [](C& c, const Value& v, const Where& at) {
                expect(v, Value::Kind::number, at, "test_block");
                if (!v.integral) at.fail("'test_block' must be an integer");
                c.dataset.test_block = static_cast<int>(v.number);
            };
            f.show = [](const C& c) { return std::to_string(c.dataset.test_block); };
            t.push_back(f);
        }
        t.push_back(bool_field("dataset", "crop", [](C& c) -> bool& { return c.dataset.crop; }));
        t.push_back(bool_field("dataset", "normalize", [](C& c) -> bool& { return c.dataset.normalize; }));

        t.push_back(text_field("pretrain", "scheme", [](C& c) -> std::string& { return c.pretrain.scheme; },
                               parse_scheme, same));
        t.push_back(size_field("pretrain", "filters", [](C& c) -> std::size_t& { return c.pretrain.shape.filters; }));
        t.push_back(size_field("pretrain", "width", [](C& c) -> std::size_t& { return c.pretrain.shape.width; }));
        t.push_back(text_field("pretrain", "activation", [](C& c) -> Activation& { return c.pretrain.shape.activation; },
                               act, act_name));
        t.push_back(size_field("pretrain", "epochs", [](C& c) -> std::size_t& { return c.pretrain.config.optimizer.max_epochs; }));
        t.push_back(double_field("pretrain", "learning_rate", [](C& c) -> double& { return c.pretrain.config.optimizer.learning_rate; }));
        t.push_back(double_field("pretrain", "momentum", [](C& c) -> double& { return c.pretrain.config.optimizer.momentum; }));
        t.push_back(double_field("pretrain", "decay_factor", [](C& c) -> double& { return c.pretrain.config.optimizer.decay_factor; }));
        t.push_back(double_field("pretrain", "l1_coeff", [](C& c) -> double& { return c.pretrain.config.optimizer.l1_coeff; }));
        t.push_back(size_field("pretrain", "batch_size", [](C& c) -> std::size_t& { return c.pretrain.config.optimizer.batch_size; }));
        t.push_back(size_field("pretrain", "patience", [](C& c) -> std::size_t& { return c.pretrain.config.patience; }));
        t.push_back(double_field("pretrain", "min_improvement", [](C& c) -> double& { return c.pretrain.config.min_improvement; }));
        t.push_back(size_field("pretrain", "batches_per_epoch", [](C& c) -> std::size_t& { return c.pretrain.config.batches_per_epoch; }));
        t.push_back(size_field("pretrain", "eval_limit", [](C& c) -> std::size_t& { return c.pretrain.config.eval_limit; }));
        t.push_back(double_field("pretrain", "init_scale", [](C& c) -> double& { return c.pretrain.config.init_scale; }));
        t.push_back(text_field("pretrain", "strategy", [](C& c) -> HydraStrategy& { return c.pretrain.config.strategy; },
                               [](const std::string& s) { return hydra_strategy_from_string(s); },
                               [](HydraStrategy s) { return std::string(to_string(s)); }));
        t.push_back(text_field("pretrain", "loss", [](C& c) -> TupleLoss& { return c.pretrain.config.tuple_loss; },
                               [](const std::string& s) { return tuple_loss_from_string(s); },
                               [](TupleLoss l) { return std::string(tuple_loss_name(l)); }));
        t.push_back(size_field("pretrain", "arity", [](C& c) -> std::size_t& { return c.pretrain.arity; }));
        t.push_back(text_field("pretrain", "scope", [](C& c) -> PairScope& { return c.pretrain.scope; },
                               [](const std::string& s) { return pair_scope_from_string(s); },
                               [](PairScope s) { return std::string(to_string(s)); }));
        t.push_back(bool_field("pretrain", "hydra", [](C& c) -> bool& { return c.pretrain.hydra; }));
        t.push_back(size_field("pretrain", "stage2_epochs", [](C& c) -> std::size_t& { return c.pretrain.stage2_epochs; }));

        t.push_back(double_field("train", "learning_rate", [](C& c) -> double& { return c.train.optimizer.learning_rate; }));
        t.push_back(double_field("train", "momentum", [](C& c) -> double& { return c.train.optimizer.momentum; }));
        t.push_back(double_field("train", "decay_factor", [](C& c) -> double& { return c.train.optimizer.decay_factor; }));
        t.push_back(double_field("train", "l1_coeff", [](C& c) -> double& { return c.train.optimizer.l1_coeff; }));
        t.push_back(size_field("train", "batch_size", [](C& c) -> std::size_t& { return c.train.optimizer.batch_size; }));
        t.push_back(size_field("train", "epochs", [](C& c) -> std::size_t& { return c.train.optimizer.max_epochs; }));
        t.push_back(double_field("train", "dropout_rate", [](C& c) -> double& { return c.train.optimizer.dropout_rate; }));
        t.push_back(size_field("train", "layer1_filters", [](C& c) -> std::size_t& { return c.train.model.layer1.filters; }));
        t.push_back(size_field("train", "layer1_width", [](C& c) -> std::size_t& { return c.train.model.layer1.width; }));
        t.push_back(size_field("train", "layer1_stride", [](C& c) -> std::size_t& { return c.train.model.layer1.stride; }));
        t.push_back(text_field("train", "layer1_activation", [](C& c) -> Activation& { return c.train.model.layer1.activation; },
                               act, act_name));
        t.push_back(size_field("train", "layer2_filters", [](C& c) -> std::size_t& { return layer2(c).filters; }));
        t.push_back(size_field("train", "layer2_width", [](C& c) -> std::size_t& { return layer2(c).width; }));
        t.push_back(size_field("train", "layer2_stride", [](C& c) -> std::size_t& { return layer2(c).stride; }));
        t.push_back(text_field("train", "layer2_activation", [](C& c) -> Activation& { return layer2(c).activation; },
                               act, act_name));

        t.push_back(text_field("eval", "mode", [](C& c) -> AggregationMode& { return c.eval.mode; },
                               [](const std::string& s) { return aggregation_mode_from_string(s); },
                               [](AggregationMode m) { return std::string(to_string(m)); }));
        return t;
    }();
    return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
    for (const auto& f : fields())
        if (f.section == section && f.key == key) return &f;
    return nullptr;
}

const std::set<std::string> kSections{"", "dataset", "pretrain", "train", "eval", "sweep"};

struct Entry {
    std::string section, key;
    Value value;
    std::size_t line;
};

std::vector<double> numbers_of(const Value& v, const Where& at, const std::string& key) {
    expect(v, Value::Kind::array, at, key);
    std::vector<double> out;
    for (const auto& item : v.items) {
        if (item.kind != Value::Kind::number) at.fail("'" + key + "' must hold numbers only");
        out.push_back(item.number);
    }
    if (out.empty()) at.fail("'" + key + "' must not be empty");
    return out;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
    std::vector<Entry> entries;
    std::string section;
    std::set<std::pair<std::string, std::string>> seen;
    std::istringstream in(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const Where at{source, lineno};
        const std::string_view line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') at.fail("malformed section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (!kSections.count(section) || section.empty()) at.fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) at.fail("expected 'key = value'");
        std::string key(trim(line.substr(0, eq)));
        if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
        if (key.empty()) at.fail("missing key");
        if (!seen.emplace(section, key).second) at.fail("duplicate key '" + key + "'");
        entries.push_back({section, key, ValueParser(line.substr(eq + 1), at).parse_all(), lineno});
    }

    ExperimentConfig cfg;
    std::map<std::string, std::size_t> line_of;
    bool layer2_enabled = true;
    for (const auto& e : entries) {
        const Where at{source, e.line};
        const std::string qualified = e.section.empty() ? e.key : e.section + "." + e.key;
        line_of[qualified] = e.line;
        if (e.section == "train" && e.key == "layer2") {
            expect(e.value, Value::Kind::boolean, at, e.key);
            layer2_enabled = e.value.boolean;
            continue;
        }
        if (e.section == "sweep") {
            if (e.key == "strategy") {
                expect(e.value, Value::Kind::string, at, e.key);
                if (e.value.text != "grid" && e.value.text != "random")
                    at.fail("unknown sweep strategy '" + e.value.text + "' (expected grid or random)");
                cfg.sweep.strategy = e.value.text;
            } else if (e.key == "budget") {
                expect(e.value, Value::Kind::number, at, e.key);
                if (!e.value.integral || e.value.number < 1) at.fail("'budget' must be a positive integer");
                cfg.sweep.budget = static_cast<std::size_t>(e.value.number);
            } else if (e.key == "log_keys") {
                expect(e.value, Value::Kind::array, at, e.key);
                for (const auto& item : e.value.items) {
                    if (item.kind != Value::Kind::string) at.fail("'log_keys' must hold strings");
                    cfg.sweep.log_keys.push_back(item.text);
                }
            } else {
                const Field* f = find_field("train", e.key);
                if (!f || !f->numeric) at.fail("unknown sweep key '" + e.key + "' (expected a numeric [train] key)");
                cfg.sweep.values[e.key] = numbers_of(e.value, at, e.key);
                ExperimentConfig scratch;
                for (double v : cfg.sweep.values[e.key]) {
                    Value num{Value::Kind::number};
                    num.number = v;
                    num.integral = std::floor(v) == v;
                    f->set(scratch, num, at);
                    try {
                        scratch.train.optimizer.validate();
                    } catch (const InvalidArgument& err) {
                        at.fail(std::string("sweep value out of range: ") + err.what());
                    }
                }
            }
            continue;
        }
        const Field* f = find_field(e.section, e.key);
        if (!f) {
            if (e.section.empty()) at.fail("unknown top-level key '" + e.key + "'");
            at.fail("unknown key '" + e.key + "' in [" + e.section + "]");
        }
        f->set(cfg, e.value, at);
    }
    if (!layer2_enabled) cfg.train.model.layer2.reset();

    const auto fail_at = [&](const std::string& key, const std::string& what) {
        const auto it = line_of.find(key);
        throw ConfigError(source, it == line_of.end() ? 0 : it->second, what);
    };
    // Optimizer messages start with the offending field name.
    const auto check_optimizer = [&](const OptimizerConfig& o, const std::string& section) {
        try {
            o.validate();
        } catch (const InvalidArgument& e) {
            const std::string what = e.what();
            std::string key = what.substr(0, what.find(' '));
            if (section == "pretrain" && key == "dropout_rate") key = "learning_rate";
            if (key == "max_epochs") key = "epochs";
            fail_at(section + "." + key, "[" + section + "] " + what);
        }
    };
    check_optimizer(cfg.train.optimizer, "train");
    check_optimizer(cfg.pretrain.config.optimizer, "pretrain");
    if (!(cfg.dataset.synth.snr >= 0.0)) fail_at("dataset.snr", "'snr' must be non-negative");
    if (!(cfg.dataset.synth.sample_rate > 0.0)) fail_at("dataset.sample_rate", "'sample_rate' must be positive");
    if (cfg.pretrain.shape.filters == 0) fail_at("pretrain.filters", "'filters' must be at least 1");
    if (cfg.pretrain.shape.width == 0) fail_at("pretrain.width", "'width' must be at least 1");
    if (cfg.pretrain.arity < 3) fail_at("pretrain.arity", "'arity' must be at least 3");
    if (cfg.train.model.layer1.filters == 0 || cfg.train.model.layer1.width == 0 || cfg.train.model.layer1.stride == 0)
        fail_at("train.layer1_filters", "layer 1 filters, width and stride must be at least 1");
    if (cfg.train.model.layer2 &&
        (cfg.train.model.layer2->filters == 0 || cfg.train.model.layer2->width == 0 || cfg.train.model.layer2->stride == 0))
        fail_at("train.layer2_filters", "layer 2 filters, width and stride must be at least 1");
    if (cfg.sweep.strategy == "random")
        for (const auto& [key, vals] : cfg.sweep.values)
            if (vals.size() != 2 || vals[0] > vals[1])
                fail_at("sweep." + key, "random sweep range for '" + key + "' must be [lo, hi]");
    for (const auto& key : cfg.sweep.log_keys)
        if (!cfg.sweep.values.count(key)) fail_at("sweep.log_keys", "log key '" + key + "' has no sweep range");
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
}

void apply_env_overrides(ExperimentConfig& cfg) {
    const char* env = std::getenv("TUPLENET_SEED");
    if (!env || !*env) return;
    std::uint64_t seed = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw InvalidArgument("TUPLENET_SEED must be a non-negative integer, got '" + std::string(s) + "'");
    cfg.seed = seed;
}

std::string to_toml(const ExperimentConfig& cfg) {
    std::ostringstream out;
    std::string section = "";
    for (const auto& f : fields()) {
        if (f.section != section) {
            section = f.section;
            out << "\n[" << section << "]\n";
        }
        if (section == "train" && f.key == "layer2_filters") {
            out << "layer2 = " << (cfg.train.model.layer2 ? "true" : "false") << '\n';
            if (!cfg.train.model.layer2) continue;
        }
        if (section == "train" && f.key.rfind("layer2_", 0) == 0 && !cfg.train.model.layer2) continue;
        out << f.key << " = " << f.show(cfg) << '\n';
    }
    out << "\n[sweep]\n";
    out << "strategy = " << quote(cfg.sweep.strategy) << '\n';
    out << "budget = " << cfg.sweep.budget << '\n';
    out << "log_keys = [";
    for (std::size_t i = 0; i < cfg.sweep.log_keys.size(); ++i) out << (i ? ", " : "") << quote(cfg.sweep.log_keys[i]);
    out << "]\n";
    for (const auto& [key, vals] : cfg.sweep.values) {
        out << key << " = [";
        for (std::size_t i = 0; i < vals.size(); ++i) out << (i ? ", " : "") << format_double(vals[i]);
        out << "]\n";
    }
    return out.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : to_toml(cfg)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf, 12);
}

void apply_train_values(ExperimentConfig& cfg, const SweepPoint& point) {
    const std::string source = "<sweep>";
    for (const auto& [key, v] : point) {
        const Field* f = find_field("train", key);
        if (!f || !f->numeric) throw InvalidArgument("unknown sweep key '" + key + "'");
        Value num{Value::Kind::number};
        num.number = v;
        num.integral = std::floor(v) == v;
        f->set(cfg, num, Where{source, 0});
    }
    cfg.train.optimizer.validate();
}

std::vector<SweepPoint> sweep_points(const ExperimentConfig& cfg) {
    if (cfg.sweep.values.empty()) throw InvalidArgument("the [sweep] section lists no parameters");
    if (cfg.sweep.strategy == "grid") return grid_points(cfg.sweep.values);
    std::map<std::string, ParamRange> ranges;
    for (const auto& [key, vals] : cfg.sweep.values) {
        ParamRange r;
        r.lo = vals[0];
        r.hi = vals[1];
        r.log_scale = std::find(cfg.sweep.log_keys.begin(), cfg.sweep.log_keys.end(), key) != cfg.sweep.log_keys.end();
        r.integer = find_field("train", key)->show(ExperimentConfig{}).find('.') == std::string::npos;
        ranges[key] = r;
    }
    return random_points(ranges, cfg.sweep.budget, cfg.seed);
}

}  // namespace tuplenet
