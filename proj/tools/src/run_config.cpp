#include "run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "beetlescan/error.hpp"

namespace beetlescan::cli {

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(std::string_view s)
{
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v))
        throw ValidationError("expected a finite number, got '" + std::string(s) + "'");
    return v;
}

std::uint64_t parse_unsigned(std::string_view s)
{
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw ValidationError("expected a non-negative integer, got '" + std::string(s) + "'");
    return v;
}

bool parse_bool(std::string_view s)
{
    if (s == "true" || s == "1")
        return true;
    if (s == "false" || s == "0")
        return false;
    throw ValidationError("expected true or false, got '" + std::string(s) + "'");
}

std::vector<double> parse_list(std::string_view s)
{
    std::vector<double> out;
    while (true)
    {
        const auto comma = s.find(',');
        out.push_back(parse_double(trim(s.substr(0, comma))));
        if (comma == std::string_view::npos)
            break;
        s.remove_prefix(comma + 1);
    }
    return out;
}

std::string format_double(double v)
{
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string format_list(const std::vector<double>& vs)
{
    std::string out;
    for (std::size_t i = 0; i < vs.size(); ++i)
        out += (i ? ", " : "") + format_double(vs[i]);
    return out;
}

struct Field
{
    std::string key;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field real(std::string key, T member)
{
    return {std::move(key), [member](RunConfig& c, std::string_view v) { member(c) = parse_double(v); },
            [member](const RunConfig& c) { return format_double(member(const_cast<RunConfig&>(c))); }};
}

template <class T>
Field count(std::string key, T member)
{
    return {std::move(key),
            [member](RunConfig& c, std::string_view v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_unsigned(v));
            },
            [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(count("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));

        f.push_back(count("height", [](RunConfig& c) -> std::size_t& { return c.scene.height; }));
        f.push_back(count("width", [](RunConfig& c) -> std::size_t& { return c.scene.width; }));
        f.push_back(count("bands", [](RunConfig& c) -> std::size_t& { return c.scene.bands; }));
        f.push_back(real("noise_std", [](RunConfig& c) -> double& { return c.scene.noise_std; }));
        f.push_back(real("prior_healthy", [](RunConfig& c) -> double& { return c.scene.abundance_prior[0]; }));
        f.push_back(real("prior_affected", [](RunConfig& c) -> double& { return c.scene.abundance_prior[1]; }));
        f.push_back(real("prior_dead", [](RunConfig& c) -> double& { return c.scene.abundance_prior[2]; }));
        f.push_back(real("pure_fraction", [](RunConfig& c) -> double& { return c.scene.pure_fraction; }));
        f.push_back(real("narrow_fraction", [](RunConfig& c) -> double& { return c.endmembers.narrow_fraction; }));
        f.push_back(count("labeled_count", [](RunConfig& c) -> std::size_t& { return c.labeled_count; }));

        f.push_back(real("alpha_min", [](RunConfig& c) -> double& { return c.pipeline.augmentation.alpha_min; }));
        f.push_back(real("alpha_max", [](RunConfig& c) -> double& { return c.pipeline.augmentation.alpha_max; }));
        f.push_back(real("sigma1", [](RunConfig& c) -> double& { return c.pipeline.augmentation.sigma1; }));
        f.push_back(real("sigma2", [](RunConfig& c) -> double& { return c.pipeline.augmentation.sigma2; }));
        f.push_back(count("num_knots", [](RunConfig& c) -> std::size_t& { return c.pipeline.augmentation.num_knots; }));

        f.push_back(real("tau", [](RunConfig& c) -> double& { return c.pipeline.pretrain.tau; }));
        f.push_back(count("batch_size", [](RunConfig& c) -> std::size_t& { return c.pipeline.pretrain.batch_size; }));
        f.push_back(count("epochs_self", [](RunConfig& c) -> std::size_t& { return c.pipeline.pretrain.epochs; }));
        f.push_back(count("samples_per_epoch",
                          [](RunConfig& c) -> std::size_t& { return c.pipeline.pretrain.samples_per_epoch; }));
        f.push_back(real("lr_self", [](RunConfig& c) -> double& { return c.pipeline.pretrain.learning_rate; }));
        f.push_back(real("wd_self", [](RunConfig& c) -> double& { return c.pipeline.pretrain.weight_decay; }));

        f.push_back(real("lambda", [](RunConfig& c) -> double& { return c.pipeline.finetune.lambda; }));
        f.push_back(real("tau_ft", [](RunConfig& c) -> double& { return c.pipeline.finetune.tau; }));
        f.push_back(count("epochs_ft", [](RunConfig& c) -> std::size_t& { return c.pipeline.finetune.epochs; }));
        f.push_back(real("lr_ft", [](RunConfig& c) -> double& { return c.pipeline.finetune.learning_rate; }));
        f.push_back(real("wd_ft", [](RunConfig& c) -> double& { return c.pipeline.finetune.weight_decay; }));

        f.push_back(real("svr_c", [](RunConfig& c) -> double& { return c.pipeline.svr.base.c; }));
        f.push_back(real("svr_sigma", [](RunConfig& c) -> double& { return c.pipeline.svr.base.sigma; }));
        f.push_back(real("svr_epsilon", [](RunConfig& c) -> double& { return c.pipeline.svr.base.epsilon; }));
        f.push_back(real("svr_tol", [](RunConfig& c) -> double& { return c.pipeline.svr.base.tol; }));
        f.push_back(count("svr_max_passes", [](RunConfig& c) -> std::size_t& { return c.pipeline.svr.base.max_passes; }));
        f.push_back({"svr_c_grid",
                     [](RunConfig& c, std::string_view v) { c.pipeline.svr.c_grid = parse_list(v); },
                     [](const RunConfig& c) { return format_list(c.pipeline.svr.c_grid); }});
        f.push_back({"svr_sigma_grid",
                     [](RunConfig& c, std::string_view v) { c.pipeline.svr.sigma_grid = parse_list(v); },
                     [](const RunConfig& c) { return format_list(c.pipeline.svr.sigma_grid); }});
        f.push_back(count("svr_grid_folds", [](RunConfig& c) -> std::size_t& { return c.pipeline.svr.grid_folds; }));
        f.push_back({"svr_tune", [](RunConfig& c, std::string_view v) { c.pipeline.svr.tune = parse_bool(v); },
                     [](const RunConfig& c) { return std::string(c.pipeline.svr.tune ? "true" : "false"); }});

        f.push_back(count("k", [](RunConfig& c) -> std::size_t& { return c.folds; }));
        f.push_back(real("split", [](RunConfig& c) -> double& { return c.split; }));
        return f;
    }();
    return table;
}

} // namespace

void RunConfig::set_seed(std::uint64_t value)
{
    seed = value;
    scene.seed = value;
    pipeline.seed = value;
}

void RunConfig::validate() const
{
    scene.validate();
    if (!(endmembers.narrow_fraction >= 0.0 && endmembers.narrow_fraction <= 1.0))
        throw ValidationError("narrow_fraction must lie in [0,1]");
    if (scene.bands < 8)
        throw ValidationError("bands must be at least 8 to host the narrow window");
    if (labeled_count < 2 || labeled_count > scene.height * scene.width)
        throw ValidationError("labeled_count must lie in [2, height*width]");
    pipeline.validate();
    if (folds < 2)
        throw ValidationError("k must be at least 2");
    if (!(split > 0.0 && split < 1.0))
        throw ValidationError("split must lie strictly between 0 and 1");
}

RunConfig parse_run_config(std::string_view text)
{
    RunConfig config;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    while (!text.empty())
    {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);

        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;

        const auto where = "config line " + std::to_string(line_no) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ValidationError(where + "expected 'key = value'");
        const std::string key(trim(line.substr(0, eq)));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end())
            throw ValidationError(where + "unknown key '" + key + "'");
        if (!seen.insert(key).second)
            throw ValidationError(where + "key '" + key + "' given twice");
        try
        {
            it->set(config, value);
        }
        catch (const ValidationError& e)
        {
            throw ValidationError(where + key + ": " + e.what());
        }
    }
    config.set_seed(config.seed);
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open config '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& config)
{
    std::string out;
    for (const auto& f : fields())
        out += f.key + " = " + f.get(config) + "\n";
    return out;
}

std::vector<std::string> run_config_keys()
{
    std::vector<std::string> keys;
    for (const auto& f : fields())
        keys.push_back(f.key);
    return keys;
}

} // namespace beetlescan::cli
