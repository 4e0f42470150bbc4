#include "dnp/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dnp {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        std::size_t p = s.find(sep, pos);
        out.push_back(trim(s.substr(pos, p == std::string::npos ? std::string::npos
                                                                : p - pos)));
        if (p == std::string::npos) break;
        pos = p + 1;
    }
    return out;
}

int to_int(const std::string& k, const std::string& v) {
    try {
        std::size_t used = 0;
        int r = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw InvalidConfig(k + ": expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& k, const std::string& v) {
    try {
        std::size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw InvalidConfig(k + ": expected number, got '" + v + "'");
    }
}

bool to_bool(const std::string& k, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw InvalidConfig(k + ": expected boolean, got '" + v + "'");
}

Vec to_vec(const std::string& k, const std::string& v) {
    auto parts = split(v, ',');
    if (parts.size() != 1 && parts.size() != 2 && parts.size() != 3)
        throw InvalidConfig(k + ": expected 1-3 numbers");
    Vec out{0, 0, 0};
    for (std::size_t i = 0; i < 3; ++i)
        out[i] = to_double(k, parts[std::min(i, parts.size() - 1)]);
    return out;
}

std::vector<double> to_doubles(const std::string& k, const std::string& v) {
    std::vector<double> out;
    for (const auto& p : split(v, ',')) out.push_back(to_double(k, p));
    return out;
}

std::vector<int> to_ints(const std::string& k, const std::string& v) {
    std::vector<int> out;
    for (const auto& p : split(v, ',')) out.push_back(to_int(k, p));
    return out;
}

std::array<int, 3> to_shape(const std::string& k, const std::string& v) {
    auto parts = split(v, ',');
    if (parts.size() < 1 || parts.size() > 3)
        throw InvalidConfig(k + ": expected 1-3 integers");
    std::array<int, 3> s{1, 1, 1};
    for (std::size_t i = 0; i < 3; ++i)
        s[i] = to_int(k, parts[std::min(i, parts.size() - 1)]);
    return s;
}

} // namespace

const ConfigDoc::Section* ConfigDoc::find(const std::string& name) const {
    for (const auto& s : sections)
        if (s.first == name) return &s.second;
    return nullptr;
}

ConfigDoc parse_config(const std::string& text) {
    ConfigDoc doc;
    std::istringstream in(text);
    std::string line;
    ConfigDoc::Section* cur = nullptr;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t cpos = line.find_first_of("#;");
        if (cpos != std::string::npos) line = line.substr(0, cpos);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw InvalidConfig("line " + std::to_string(lineno) + ": bad section header");
            std::string name = trim(line.substr(1, line.size() - 2));
            if (doc.find(name))
                throw InvalidConfig("duplicate section [" + name + "]");
            doc.sections.emplace_back(name, ConfigDoc::Section{});
            cur = &doc.sections.back().second;
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig("line " + std::to_string(lineno) + ": expected key = value");
        if (!cur)
            throw InvalidConfig("line " + std::to_string(lineno) + ": key outside a section");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        for (const auto& kv : *cur)
            if (kv.first == key)
                throw InvalidConfig("duplicate key '" + key + "'");
        cur->emplace_back(key, val);
    }
    return doc;
}

ConfigDoc load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string serialize_config(const ConfigDoc& doc) {
    std::string out;
    for (const auto& s : doc.sections) {
        out += "[" + s.first + "]\n";
        for (const auto& kv : s.second) out += kv.first + " = " + kv.second + "\n";
        out += "\n";
    }
    return out;
}

namespace {

struct SectionReader {
    const std::string name;
    const ConfigDoc::Section* sec;
    std::vector<std::string> seen;

    bool has(const std::string& key) const {
        if (!sec) return false;
        for (const auto& kv : *sec)
            if (kv.first == key) return true;
        return false;
    }
    std::string get(const std::string& key) {
        seen.push_back(key);
        for (const auto& kv : *sec)
            if (kv.first == key) return kv.second;
        throw InvalidConfig("[" + name + "] missing key " + key);
    }
    std::string qualified(const std::string& key) const { return name + "." + key; }

    template <typename T, typename Fn>
    void opt(const std::string& key, T& dst, Fn convert) {
        seen.push_back(key);
        if (!has(key)) return;
        dst = convert(qualified(key), get_raw(key));
    }
    std::string get_raw(const std::string& key) const {
        for (const auto& kv : *sec)
            if (kv.first == key) return kv.second;
        return "";
    }
    void check_unknown() const {
        if (!sec) return;
        for (const auto& kv : *sec)
            if (std::find(seen.begin(), seen.end(), kv.first) == seen.end())
                throw InvalidConfig("[" + name + "] unknown key: " + kv.first);
    }
};

void read_augment(SectionReader& r, const std::string& prefix, AugmentParams& a,
                  bool* any = nullptr) {
    bool found = false;
    auto mark = [&](const std::string& key) {
        if (r.has(key)) found = true;
    };
    mark(prefix + ".dphi");
    mark(prefix + ".dscale");
    mark(prefix + ".flip");
    mark(prefix + ".independent");
    r.opt(prefix + ".dphi", a.dphi, to_vec);
    r.opt(prefix + ".dscale", a.dscale, to_vec);
    r.opt(prefix + ".flip", a.flip, [](const std::string& k, const std::string& v) {
        auto iv = to_ints(k, v);
        std::array<int, 3> f{0, 0, 0};
        for (std::size_t i = 0; i < 3; ++i)
            f[i] = iv[std::min(i, iv.size() - 1)] ? 1 : 0;
        return f;
    });
    r.opt(prefix + ".independent", a.independent, to_bool);
    if (any) *any = found;
}

} // namespace

FullConfig interpret_config(const ConfigDoc& doc) {
    for (const auto& s : doc.sections)
        if (s.first != "scheme" && s.first != "model" && s.first != "train" &&
            s.first != "apply")
            throw InvalidConfig("unknown section [" + s.first + "]");

    FullConfig c;

    SectionReader scheme{"scheme", doc.find("scheme"), {}};
    if (!scheme.sec) throw InvalidConfig("missing [scheme] section");
    scheme.opt("depth", c.scheme.depth, to_int);
    scheme.opt("ndim", c.scheme.ndim, to_int);
    scheme.seen.push_back("patch_size");
    if (scheme.has("patch_size")) {
        c.scheme.patch_size.clear();
        for (const auto& entry : split(scheme.get_raw("patch_size"), ';'))
            c.scheme.patch_size.push_back(to_shape("scheme.patch_size", entry));
    }
    auto opt_vec = [&](const std::string& key, std::optional<Vec>& dst) {
        scheme.seen.push_back(key);
        if (scheme.has(key)) dst = to_vec(scheme.qualified(key), scheme.get_raw(key));
    };
    opt_vec("fov_mm", c.scheme.fov_mm);
    opt_vec("fov_rel", c.scheme.fov_rel);
    opt_vec("destvox_mm", c.scheme.destvox_mm);
    opt_vec("destvox_rel", c.scheme.destvox_rel);
    if (c.scheme.fov_mm && c.scheme.fov_rel)
        throw InvalidConfig("give exactly one of fov_mm / fov_rel");
    if (c.scheme.destvox_mm && c.scheme.destvox_rel)
        throw InvalidConfig("give exactly one of destvox_mm / destvox_rel");
    scheme.opt("system", c.scheme.system,
               [](const std::string& k, const std::string& v) {
                   if (v != "world" && v != "matrix")
                       throw InvalidConfig(k + ": expected world or matrix");
                   return v;
               });
    scheme.opt("snapper", c.scheme.snapper, to_ints);
    scheme.opt("interp_type", c.scheme.interp_type,
               [](const std::string&, const std::string& v) { return parse_interp(v); });
    scheme.opt("scatter_type", c.scheme.scatter_type,
               [](const std::string&, const std::string& v) { return parse_interp(v); });
    scheme.opt("smoothfac_data", c.scheme.smoothfac_data,
               [](const std::string&, const std::string& v) { return parse_prefilter(v); });
    scheme.opt("smoothfac_label", c.scheme.smoothfac_label,
               [](const std::string&, const std::string& v) { return parse_prefilter(v); });
    scheme.opt("normalize", c.scheme.normalize_input,
               [](const std::string&, const std::string& v) { return parse_normalize(v); });
    scheme.check_unknown();

    SectionReader model{"model", doc.find("model"), {}};
    if (model.sec) {
        model.opt("block_type", c.model.block_type,
                  [](const std::string& k, const std::string& v) {
                      if (v != "fcn" && v != "unet")
                          throw InvalidConfig(k + ": expected fcn or unet");
                      return v;
                  });
        model.opt("hidden", c.model.hidden, to_int);
        model.opt("identical_blocks", c.model.identical_blocks, to_bool);
        model.opt("intermediate_out", c.model.intermediate_out, to_int);
        model.opt("num_labels", c.model.num_labels, to_int);
        model.opt("categorical", c.model.categorical, to_bool);
        model.seen.push_back("categorial_label");
        if (model.has("categorial_label")) {
            c.labels.categorial_label =
                to_ints("model.categorial_label", model.get_raw("categorial_label"));
            c.model.num_labels = int(c.labels.categorial_label->size());
            c.model.label_values = *c.labels.categorial_label;
        }
        model.opt("block_out", c.model.block_out, to_ints);
        model.check_unknown();
    }
    c.labels.categorical = c.model.categorical;
    c.labels.num_labels = c.model.num_labels;
    if (c.model.num_labels < 1) throw InvalidConfig("model.num_labels must be >= 1");

    SectionReader train{"train", doc.find("train"), {}};
    if (train.sec) {
        train.opt("num_its", c.train.num_its, to_int);
        train.opt("epochs", c.train.epochs, to_int);
        train.opt("num_patches", c.train.num_patches, to_int);
        train.opt("batch_size", c.train.batch_size, to_int);
        train.opt("intermediate_loss", c.train.intermediate_loss, to_bool);
        train.opt("hard_mining", c.train.hard_mining, to_double);
        train.opt("hard_mining_order", c.train.hard_mining_order,
                  [](const std::string& k, const std::string& v) {
                      if (v != "loss" && v != "f1" && v != "balance")
                          throw InvalidConfig(k + ": expected loss, f1 or balance");
                      return v;
                  });
        train.opt("hard_mining_maxage", c.train.hard_mining_maxage, to_int);
        train.opt("dontcare", c.train.dontcare, to_bool);
        train.opt("learning_rate", c.train.learning_rate, to_double);
        train.opt("balance.ratio", c.train.balance.ratio, to_double);
        train.opt("balance.autoweight", c.train.balance.autoweight, to_bool);
        train.opt("balance.label_weight", c.train.balance.label_weight, to_doubles);
        train.opt("parallel", c.train.parallel, to_bool);
        read_augment(train, "augment", c.train.augment);
        train.check_unknown();
    }

    SectionReader apply{"apply", doc.find("apply"), {}};
    if (apply.sec) {
        apply.opt("generate_type", c.apply.generate_type,
                  [](const std::string& k, const std::string& v) {
                      if (v != "random" && v != "tree")
                          throw InvalidConfig(k + ": expected random or tree");
                      return v;
                  });
        apply.opt("num_patches", c.apply.num_patches, to_int);
        apply.opt("branch_factor", c.apply.branch_factor, to_int);
        apply.opt("num_chunks", c.apply.num_chunks, to_int);
        apply.opt("lazyEval.fraction", c.apply.lazy_fraction, to_double);
        apply.opt("attention_reduce", c.apply.attention_reduce,
                  [](const std::string& k, const std::string& v) {
                      if (v != "mean" && v != "max" && v != "sum")
                          throw InvalidConfig(k + ": expected mean, max or sum");
                      return v;
                  });
        apply.opt("attention_activation", c.apply.attention_sigmoid,
                  [](const std::string& k, const std::string& v) {
                      if (v == "sigmoid") return true;
                      if (v == "none") return false;
                      throw InvalidConfig(k + ": expected sigmoid or none");
                  });
        apply.opt("window", c.apply.window,
                  [](const std::string&, const std::string& v) { return parse_window(v); });
        apply.opt("sparse_suppression", c.apply.sparse_alpha, to_double);
        apply.seen.push_back("augment");
        AugmentParams ap;
        bool any = false;
        read_augment(apply, "augment", ap, &any);
        if (apply.has("augment")) {
            std::string v = apply.get_raw("augment");
            if (v == "off")
                c.apply.augment = AugmentParams{}; // disabled
            else if (v == "train")
                c.apply.augment.reset();
            else
                throw InvalidConfig("apply.augment: expected off or train");
        }
        if (any) c.apply.augment = ap;
        apply.opt("out_typ", c.apply.out_type,
                  [](const std::string&, const std::string& v) { return v; });
        apply.opt("ce_threshold", c.apply.ce_threshold, to_double);
        apply.opt("sampling_factor", c.apply.sampling_factor, to_double);
        apply.seen.push_back("level");
        if (apply.has("level")) {
            std::string v = apply.get_raw("level");
            if (v == "mix") {
                c.apply.level_mix = true;
                c.apply.level = -1;
            } else {
                c.apply.level = to_int("apply.level", v);
            }
        }
        apply.opt("jitter", c.apply.tree_jitter, to_double);
        apply.check_unknown();
    }
    return c;
}

} // namespace dnp
