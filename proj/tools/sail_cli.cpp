#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "sail/pipeline.hpp"

namespace {

struct CliArgs {
    std::string config_path;
    uint64_t seed = 0;
    std::string out;
    bool from_scratch = false;
    bool force = false;
};

void add_common(CLI::App* sub, CliArgs& args) {
    sub->add_option("--config", args.config_path, "run configuration JSON")->required();
    sub->add_option("--seed", args.seed, "override the master seed");
    sub->add_option("--out", args.out, "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SAIL: two-stage segmentation-guided classifier with CAM explanations"};
    app.require_subcommand(1);
    CliArgs args;

    CLI::App* pretrain = app.add_subcommand("pretrain", "Stage I segmentation pretraining");
    CLI::App* finetune = app.add_subcommand("finetune", "Stage II classification fine-tuning");
    CLI::App* explain = app.add_subcommand("explain", "write CAM maps for the test split");
    CLI::App* evaluate = app.add_subcommand("evaluate", "XAI + classification metrics");
    CLI::App* ablate_heads = app.add_subcommand("ablate-heads", "train every head variant");
    CLI::App* ablate_layers =
        app.add_subcommand("ablate-layers", "attribution metrics at every layer");
    CLI::App* gen_data = app.add_subcommand("gen-data", "export the synthetic dataset");
    for (CLI::App* sub :
         {pretrain, finetune, explain, evaluate, ablate_heads, ablate_layers, gen_data})
        add_common(sub, args);
    finetune->add_flag("--from-scratch", args.from_scratch,
                       "skip the Stage I checkpoint (scratch baseline)");
    evaluate->add_flag("--force", args.force, "ignore config-hash mismatches");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        sail::RunConfig cfg = sail::load_run_config(args.config_path);
        CLI::App* sub = app.get_subcommands().front();
        if (sub->count("--seed")) cfg.seed = args.seed;
        if (sub->count("--out")) cfg.out = args.out;

        if (sub == pretrain) sail::run_pretrain(cfg);
        else if (sub == finetune) sail::run_finetune(cfg, args.from_scratch);
        else if (sub == explain) sail::run_explain(cfg);
        else if (sub == evaluate) sail::run_evaluate(cfg, args.force);
        else if (sub == ablate_heads) sail::run_ablate_heads(cfg);
        else if (sub == ablate_layers) sail::run_ablate_layers(cfg);
        else sail::run_gen_data(cfg);
        return 0;
    } catch (const sail::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const sail::LookupError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const sail::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const sail::ArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
