#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "beetlescan/error.hpp"
#include "commands.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace beetlescan;

namespace {

struct Common
{
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, const char* out_help)
{
    cmd->add_option("--config", c.config, "flat key = value config file");
    cmd->add_option("--seed", c.seed, "overrides the config seed");
    cmd->add_option("--out", c.out, out_help)->required();
}

cli::RunConfig resolve(const Common& c)
{
    cli::RunConfig cfg = c.config.empty() ? cli::RunConfig{} : cli::load_run_config(c.config);
    if (c.seed)
        cfg.set_seed(*c.seed);
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Sub-pixel bark-beetle abundance estimation from hyperspectral spectra"};
    app.require_subcommand(1);

    Common gen_c;
    auto* gen = app.add_subcommand("generate", "write a synthetic scene, truth map, endmembers and labeled samples");
    add_common(gen, gen_c, "output directory");

    Common train_c;
    std::string train_cube, train_labeled;
    auto* train = app.add_subcommand("train", "train the full pipeline and write a checkpoint");
    add_common(train, train_c, "checkpoint path");
    train->add_option("--cube", train_cube, "HSCN cube of unlabeled pixels")->required();
    train->add_option("--labeled", train_labeled, "labeled sample CSV")->required();

    Common eval_c;
    std::string eval_cube, eval_labeled;
    auto* eval = app.add_subcommand("evaluate", "k-fold comparison of all methods; writes a report CSV");
    add_common(eval, eval_c, "report CSV path");
    eval->add_option("--cube", eval_cube, "HSCN cube of unlabeled pixels")->required();
    eval->add_option("--labeled", eval_labeled, "labeled sample CSV")->required();

    Common pred_c;
    std::string pred_ckpt, pred_cube, pred_mask;
    auto* pred = app.add_subcommand("predict-map", "predict an abundance map for a cube");
    add_common(pred, pred_c, "HABN output path");
    pred->add_option("--checkpoint", pred_ckpt, "pipeline checkpoint")->required();
    pred->add_option("--cube", pred_cube, "HSCN cube")->required();
    pred->add_option("--mask", pred_mask, "HMSK mask; masked pixels are skipped");

    Common render_c;
    std::string render_map;
    std::vector<std::string> joint;
    auto* render = app.add_subcommand("render-map", "render an abundance map as a binary PPM");
    add_common(render, render_c, "PPM output path");
    render->add_option("--map", render_map, "HABN abundance map")->required();
    render->add_option("--joint-with", joint, "sibling maps pooled into the per-channel min/max");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*gen)
        {
            const auto files = cli::cmd_generate(resolve(gen_c), gen_c.out);
            std::cout << "wrote " << files.cube.string() << ", " << files.truth.string() << ", "
                      << files.endmembers.string() << ", " << files.labeled.string() << "\n";
        }
        else if (*train)
        {
            const auto files = cli::cmd_train(resolve(train_c), train_cube, train_labeled, train_c.out, std::cout);
            std::cout << "wrote " << files.checkpoint.string() << "\n";
        }
        else if (*eval)
        {
            cli::cmd_evaluate(resolve(eval_c), eval_cube, eval_labeled, eval_c.out, std::cout);
        }
        else if (*pred)
        {
            resolve(pred_c);
            std::optional<fs::path> mask;
            if (!pred_mask.empty())
                mask = pred_mask;
            cli::cmd_predict_map(pred_ckpt, pred_cube, mask, pred_c.out);
        }
        else if (*render)
        {
            resolve(render_c);
            const std::vector<fs::path> siblings(joint.begin(), joint.end());
            cli::cmd_render_map(render_map, render_c.out, siblings);
        }
    }
    catch (const std::exception& e)
    {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
