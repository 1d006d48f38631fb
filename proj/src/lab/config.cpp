#include "roste/lab/config.hpp"

#include "roste/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace roste::lab {

using nlohmann::json;

namespace {

// Reads keys from one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object())
            throw ConfigError(path_ + ": expected an object");
    }

    template <typename T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end())
            return;
        try {
            out = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path_ + "." + key + ": " + e.what());
        }
    }

    template <typename T, typename Parse>
    void get_enum(const char* key, T& out, Parse parse)
    {
        std::string s;
        bool present = j_.contains(key);
        get(key, s);
        if (present)
            out = parse(s);
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& out)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end())
            return;
        if (it->is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }

    const json* child(const char* key)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const std::string& path() const { return path_; }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json spec_json(const OutlierProfile& o)
{
    return json{{"magnitude", o.magnitude},
                {"on_weights", o.on_weights},
                {"on_inputs", o.on_inputs},
                {"coordinate", o.coordinate}};
}

void read_outliers(const json& j, const std::string& path, OutlierProfile& o)
{
    ObjectReader r(j, path);
    r.get("magnitude", o.magnitude);
    r.get("on_weights", o.on_weights);
    r.get("on_inputs", o.on_inputs);
    r.get("coordinate", o.coordinate);
    r.finish();
}

json roste_json(const RosteConfig& c)
{
    return json{{"K", c.K},
                {"T", c.T},
                {"eta", c.eta ? json(*c.eta) : json("auto")},
                {"calib_n", c.calib_n},
                {"batch", c.batch},
                {"selection", to_string(c.selection)},
                {"log_every", c.log_every},
                {"calib_precision", to_string(c.calib_precision)},
                {"momentum", c.momentum}};
}

void read_roste(const json& j, const std::string& path, RosteConfig& c)
{
    ObjectReader r(j, path);
    r.get("K", c.K);
    r.get("T", c.T);
    if (const json* eta = r.child("eta")) {
        if (eta->is_string()) {
            if (eta->get<std::string>() != "auto")
                throw ConfigError(path + ".eta: expected a number or \"auto\"");
            c.eta.reset();
        } else if (eta->is_number()) {
            c.eta = eta->get<double>();
        } else {
            throw ConfigError(path + ".eta: expected a number or \"auto\"");
        }
    }
    r.get("calib_n", c.calib_n);
    r.get("batch", c.batch);
    r.get_enum("selection", c.selection, parse_selection_mode);
    r.get("log_every", c.log_every);
    r.get_enum("calib_precision", c.calib_precision, parse_calib_precision);
    r.get("momentum", c.momentum);
    r.finish();
}

json task_json(const TaskParams& t)
{
    return json{{"dims", t.dims},
                {"samples", t.samples},
                {"loss", to_string(t.loss)},
                {"outlier_magnitude", t.outlier_magnitude},
                {"outlier_channel", t.outlier_channel},
                {"pretrain_noise", t.pretrain_noise},
                {"w_bits", t.w_bits},
                {"x_bits", t.x_bits},
                {"mode", to_string(t.mode)},
                {"w_grouping", to_string(t.w_grouping)},
                {"clip", t.clip}};
}

void read_task(const json& j, const std::string& path, TaskParams& t)
{
    ObjectReader r(j, path);
    r.get("dims", t.dims);
    r.get("samples", t.samples);
    r.get_enum("loss", t.loss, parse_loss_kind);
    r.get("outlier_magnitude", t.outlier_magnitude);
    r.get("outlier_channel", t.outlier_channel);
    r.get("pretrain_noise", t.pretrain_noise);
    r.get("w_bits", t.w_bits);
    r.get("x_bits", t.x_bits);
    r.get_enum("mode", t.mode, parse_quant_mode);
    r.get_enum("w_grouping", t.w_grouping, parse_grouping);
    r.get("clip", t.clip);
    r.finish();
}

void validate_task(const TaskParams& t, const std::string& path)
{
    if (t.dims.size() < 2)
        throw ConfigError(path + ".dims: need at least an input and an output width");
    for (std::size_t d : t.dims)
        if (d == 0)
            throw ConfigError(path + ".dims: widths must be positive");
    if (t.samples == 0)
        throw ConfigError(path + ".samples must be >= 1");
    if (t.outlier_channel >= t.dims.front())
        throw ConfigError(path + ".outlier_channel out of range");
    if (!(t.outlier_magnitude >= 1.0))
        throw ConfigError(path + ".outlier_magnitude must be >= 1");
    if (t.loss == LossKind::cross_entropy && t.dims.back() < 2)
        throw ConfigError(path + ": cross_entropy needs at least two output classes");
    try {
        QuantSpec{t.w_bits, t.mode, t.clip, t.w_grouping}.validate();
        QuantSpec{t.x_bits, t.mode, t.clip, Grouping::per_row}.validate();
    } catch (const DomainError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

template <typename T>
json optional_json(const std::optional<T>& v)
{
    return v ? json(*v) : json(nullptr);
}

} // namespace

RosteConfig ExperimentConfig::default_roste()
{
    RosteConfig c;
    c.K = 1;
    c.T = 300;
    c.eta = 0.0005;
    c.batch = 16;
    c.calib_n = 128;
    c.selection = SelectionMode::layerwise;
    return c;
}

void ExperimentConfig::validate() const
{
    if (threads == 0)
        throw ConfigError("threads must be >= 1");
    if (output_dir.empty())
        throw ConfigError("output_dir must not be empty");
    switch (experiment) {
    case Experiment::prop1:
        if (prop1.trials == 0)
            throw ConfigError("prop1.trials must be >= 1");
        if (!(prop1.delta > 0.0 && prop1.delta < 1.0))
            throw ConfigError("prop1.delta must lie in (0, 1)");
        if (prop1.dims.empty() || prop1.bits.empty() || prop1.distributions.empty())
            throw ConfigError("prop1: empty grid");
        for (std::size_t d : prop1.dims)
            if (d < 2 || !is_power_of_two(d))
                throw ConfigError("prop1.dims: " + std::to_string(d) + " is not a power of two >= 2");
        for (int b : prop1.bits)
            if (b < 2 || b > 16)
                throw ConfigError("prop1.bits: " + std::to_string(b) + " outside [2, 16]");
        break;
    case Experiment::theorem1:
        if (theorem1.seeds == 0 || theorem1.T == 0 || theorem1.log_every == 0 || theorem1.data_count == 0)
            throw ConfigError("theorem1: seeds, T, log_every and data_count must be >= 1");
        if (theorem1.d < 2 || !is_power_of_two(theorem1.d))
            throw ConfigError("theorem1.d must be a power of two >= 2");
        if (theorem1.x_bits < 2 || theorem1.x_bits > 16 || theorem1.w_bits < 2 || theorem1.w_bits > 16)
            throw ConfigError("theorem1: bit-widths must lie in [2, 16]");
        if (theorem1.outliers.coordinate >= theorem1.d)
            throw ConfigError("theorem1.outliers.coordinate out of range");
        break;
    case Experiment::fig4:
        validate_task(fig4.task, "fig4.task");
        if (fig4.seeds == 0)
            throw ConfigError("fig4.seeds must be >= 1");
        roste.validate(fig4.task.dims.size() - 1);
        if (!roste.eta)
            throw ConfigError("roste.eta: 'auto' is only meaningful for theorem1");
        break;
    case Experiment::train:
        validate_task(train.task, "train.task");
        roste.validate(train.task.dims.size() - 1);
        if (!roste.eta)
            throw ConfigError("roste.eta: 'auto' is only meaningful for theorem1");
        break;
    case Experiment::select:
        if (select.instances == 0 || select.calib_n == 0)
            throw ConfigError("select: instances and calib_n must be >= 1");
        if (select.min_layers < 1 || select.min_layers > select.max_layers || select.max_layers > kMaxExhaustiveLayers)
            throw ConfigError("select: need 1 <= min_layers <= max_layers <= 20");
        if (select.width < 2 || !is_power_of_two(select.width))
            throw ConfigError("select.width must be a power of two >= 2");
        if (select.w_bits < 2 || select.w_bits > 16 || select.x_bits < 2 || select.x_bits > 16)
            throw ConfigError("select: bit-widths must lie in [2, 16]");
        break;
    case Experiment::fwht_check:
        if (fwht_check.dims.empty() || fwht_check.vectors == 0)
            throw ConfigError("fwht_check: dims must be non-empty and vectors >= 1");
        break;
    }
}

json to_json(const ExperimentConfig& cfg)
{
    json dists = json::array();
    for (auto d : cfg.prop1.distributions)
        dists.push_back(to_string(d));
    return json{
        {"experiment", to_string(cfg.experiment)},
        {"seed", cfg.seed},
        {"output_dir", cfg.output_dir},
        {"threads", cfg.threads},
        {"roste", roste_json(cfg.roste)},
        {"prop1",
         {{"dims", cfg.prop1.dims},
          {"bits", cfg.prop1.bits},
          {"distributions", dists},
          {"trials", cfg.prop1.trials},
          {"delta", cfg.prop1.delta},
          {"slack", cfg.prop1.slack}}},
        {"theorem1",
         {{"d", cfg.theorem1.d},
          {"data_count", cfg.theorem1.data_count},
          {"x_bits", cfg.theorem1.x_bits},
          {"w_bits", cfg.theorem1.w_bits},
          {"seeds", cfg.theorem1.seeds},
          {"T", cfg.theorem1.T},
          {"log_every", cfg.theorem1.log_every},
          {"outliers", spec_json(cfg.theorem1.outliers)},
          {"slack", cfg.theorem1.slack},
          {"expect_ratio_max", optional_json(cfg.theorem1.expect_ratio_max)},
          {"expect_decay_orders", optional_json(cfg.theorem1.expect_decay_orders)}}},
        {"fig4",
         {{"task", task_json(cfg.fig4.task)},
          {"seeds", cfg.fig4.seeds},
          {"warmup", cfg.fig4.warmup},
          {"expect_roste_below", cfg.fig4.expect_roste_below},
          {"min_pass_fraction", cfg.fig4.min_pass_fraction}}},
        {"train", {{"task", task_json(cfg.train.task)}, {"resume_from", cfg.train.resume_from}}},
        {"select",
         {{"instances", cfg.select.instances},
          {"min_layers", cfg.select.min_layers},
          {"max_layers", cfg.select.max_layers},
          {"width", cfg.select.width},
          {"calib_n", cfg.select.calib_n},
          {"w_bits", cfg.select.w_bits},
          {"x_bits", cfg.select.x_bits},
          {"tolerance", cfg.select.tolerance},
          {"min_fraction", cfg.select.min_fraction}}},
        {"fwht_check",
         {{"dims", cfg.fwht_check.dims},
          {"vectors", cfg.fwht_check.vectors},
          {"tolerance", cfg.fwht_check.tolerance}}},
    };
}

ExperimentConfig from_json(const json& j)
{
    ExperimentConfig cfg;
    ObjectReader r(j, "config");
    r.get_enum("experiment", cfg.experiment, parse_experiment);
    r.get("seed", cfg.seed);
    r.get("output_dir", cfg.output_dir);
    r.get("threads", cfg.threads);
    if (const json* c = r.child("roste"))
        read_roste(*c, "roste", cfg.roste);
    if (const json* c = r.child("prop1")) {
        ObjectReader p(*c, "prop1");
        p.get("dims", cfg.prop1.dims);
        p.get("bits", cfg.prop1.bits);
        if (const json* d = p.child("distributions")) {
            std::vector<std::string> names;
            try {
                names = d->get<std::vector<std::string>>();
            } catch (const json::exception& e) {
                throw ConfigError(std::string("prop1.distributions: ") + e.what());
            }
            cfg.prop1.distributions.clear();
            for (const auto& n : names)
                cfg.prop1.distributions.push_back(parse_weight_distribution(n));
        }
        p.get("trials", cfg.prop1.trials);
        p.get("delta", cfg.prop1.delta);
        p.get("slack", cfg.prop1.slack);
        p.finish();
    }
    if (const json* c = r.child("theorem1")) {
        ObjectReader p(*c, "theorem1");
        auto& t = cfg.theorem1;
        p.get("d", t.d);
        p.get("data_count", t.data_count);
        p.get("x_bits", t.x_bits);
        p.get("w_bits", t.w_bits);
        p.get("seeds", t.seeds);
        p.get("T", t.T);
        p.get("log_every", t.log_every);
        if (const json* o = p.child("outliers"))
            read_outliers(*o, "theorem1.outliers", t.outliers);
        p.get("slack", t.slack);
        p.get_optional("expect_ratio_max", t.expect_ratio_max);
        p.get_optional("expect_decay_orders", t.expect_decay_orders);
        p.finish();
    }
    if (const json* c = r.child("fig4")) {
        ObjectReader p(*c, "fig4");
        if (const json* t = p.child("task"))
            read_task(*t, "fig4.task", cfg.fig4.task);
        p.get("seeds", cfg.fig4.seeds);
        p.get("warmup", cfg.fig4.warmup);
        p.get("expect_roste_below", cfg.fig4.expect_roste_below);
        p.get("min_pass_fraction", cfg.fig4.min_pass_fraction);
        p.finish();
    }
    if (const json* c = r.child("train")) {
        ObjectReader p(*c, "train");
        if (const json* t = p.child("task"))
            read_task(*t, "train.task", cfg.train.task);
        p.get("resume_from", cfg.train.resume_from);
        p.finish();
    }
    if (const json* c = r.child("select")) {
        ObjectReader p(*c, "select");
        auto& s = cfg.select;
        p.get("instances", s.instances);
        p.get("min_layers", s.min_layers);
        p.get("max_layers", s.max_layers);
        p.get("width", s.width);
        p.get("calib_n", s.calib_n);
        p.get("w_bits", s.w_bits);
        p.get("x_bits", s.x_bits);
        p.get("tolerance", s.tolerance);
        p.get("min_fraction", s.min_fraction);
        p.finish();
    }
    if (const json* c = r.child("fwht_check")) {
        ObjectReader p(*c, "fwht_check");
        p.get("dims", cfg.fwht_check.dims);
        p.get("vectors", cfg.fwht_check.vectors);
        p.get("tolerance", cfg.fwht_check.tolerance);
        p.finish();
    }
    r.finish();
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    return from_json(j);
}

std::string config_hash(const ExperimentConfig& cfg)
{
    // Output location and worker count do not influence results.
    json j = to_json(cfg);
    j.erase("output_dir");
    j.erase("threads");
    const std::string canonical = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

std::string to_string(Experiment e)
{
    switch (e) {
    case Experiment::prop1:
        return "prop1";
    case Experiment::theorem1:
        return "theorem1";
    case Experiment::fig4:
        return "fig4";
    case Experiment::train:
        return "train";
    case Experiment::select:
        return "select";
    case Experiment::fwht_check:
        return "fwht-check";
    }
    return "prop1";
}

Experiment parse_experiment(const std::string& s)
{
    if (s == "prop1")
        return Experiment::prop1;
    if (s == "theorem1")
        return Experiment::theorem1;
    if (s == "fig4")
        return Experiment::fig4;
    if (s == "train")
        return Experiment::train;
    if (s == "select")
        return Experiment::select;
    if (s == "fwht-check" || s == "fwht_check")
        return Experiment::fwht_check;
    throw ConfigError("unknown experiment '" + s + "'");
}

} // namespace roste::lab
