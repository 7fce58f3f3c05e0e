// Command-line surface over the extraction/alignment library. Every
// subcommand reads a JSON config file (all keys optional) and accepts flag
// overrides for the paths and thresholds it needs; outputs and a run
// manifest land in the output directory.

#include <CLI11.hpp>

#include "eppc/eppc.hpp"

namespace {

struct cli_overrides {
    std::string config_path;
    std::string inventory, gold, predictions, raw_outputs, representations, embeddings;
    std::string contexts, sc_predictions, cot_predictions, mock_script, output_dir;
    std::vector<std::string> samples, seeds, checkpoints, candidates;
    std::string strategy, gateway_mode, prior;
    double span_threshold = -1.0;
    double sft_loss = std::numeric_limits<double>::quiet_NaN();
    bool taxonomy = false;
    long long seed = -1;
    long long workers = -1;
};

void add_common_flags(CLI::App* cmd, cli_overrides& ov) {
    cmd->add_option("--config", ov.config_path, "JSON config file");
    cmd->add_option("--inventory", ov.inventory, "label inventory file (TSV)");
    cmd->add_option("--gold", ov.gold, "gold annotations file (JSONL)");
    cmd->add_option("--predictions", ov.predictions, "predictions file (JSONL)");
    cmd->add_option("--raw-outputs", ov.raw_outputs, "raw model outputs file (JSONL)");
    cmd->add_option("--representations", ov.representations, "representation vectors (JSONL)");
    cmd->add_option("--embeddings", ov.embeddings, "label description embeddings (TSV)");
    cmd->add_option("--contexts", ov.contexts, "gold-shaped context file; labels are not read");
    cmd->add_option("--sc-predictions", ov.sc_predictions, "self-consistency predictions file");
    cmd->add_option("--cot-predictions", ov.cot_predictions, "CoT-SR predictions file");
    cmd->add_option("--mock-script", ov.mock_script, "scripted generation turns (JSONL)");
    cmd->add_option("--samples", ov.samples, "per-sample prediction files");
    cmd->add_option("--seeds", ov.seeds, "per-seed prediction files");
    cmd->add_option("--checkpoints", ov.checkpoints, "vector-map files to average");
    cmd->add_option("--candidates", ov.candidates,
                    "source=file candidate prediction inputs for rerank");
    cmd->add_option("--out", ov.output_dir, "output directory");
    cmd->add_option("--seed", ov.seed, "random seed");
    cmd->add_option("--workers", ov.workers, "worker threads for per-example commands");
}

eppc::pipeline_config build_config(const cli_overrides& ov) {
    eppc::pipeline_config cfg;
    if (!ov.config_path.empty()) cfg = eppc::load_pipeline_config(ov.config_path);
    auto set_if = [](const std::string& v, std::string& target) {
        if (!v.empty()) target = v;
    };
    set_if(ov.inventory, cfg.paths.inventory);
    set_if(ov.gold, cfg.paths.gold);
    set_if(ov.predictions, cfg.paths.predictions);
    set_if(ov.raw_outputs, cfg.paths.raw_outputs);
    set_if(ov.representations, cfg.paths.representations);
    set_if(ov.embeddings, cfg.paths.embeddings);
    set_if(ov.contexts, cfg.paths.contexts);
    set_if(ov.sc_predictions, cfg.paths.sc_predictions);
    set_if(ov.cot_predictions, cfg.paths.cot_predictions);
    set_if(ov.mock_script, cfg.paths.mock_script);
    set_if(ov.output_dir, cfg.paths.output_dir);
    set_if(ov.strategy, cfg.strategy);
    set_if(ov.gateway_mode, cfg.gateway_mode);
    set_if(ov.prior, cfg.prior);
    if (!ov.samples.empty()) cfg.paths.samples = ov.samples;
    if (!ov.seeds.empty()) cfg.paths.seeds = ov.seeds;
    if (!ov.checkpoints.empty()) cfg.paths.checkpoints = ov.checkpoints;
    for (const auto& spec : ov.candidates) {
        auto eq = spec.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--candidates expects source=file, got '" + spec + "'");
        cfg.paths.candidates[spec.substr(0, eq)] = spec.substr(eq + 1);
    }
    if (ov.span_threshold >= 0.0) cfg.span_threshold = ov.span_threshold;
    if (!std::isnan(ov.sft_loss)) cfg.sft_loss = ov.sft_loss;
    if (ov.taxonomy) cfg.taxonomy = true;
    if (ov.seed >= 0) cfg.seed = static_cast<std::uint32_t>(ov.seed);
    if (ov.workers > 0) cfg.workers = static_cast<std::size_t>(ov.workers);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical Code/Sub-code/Span extraction toolkit"};
    app.require_subcommand(1);

    cli_overrides ov;

    CLI::App* parse = app.add_subcommand("parse", "Recover structured predictions from raw text");
    CLI::App* validate = app.add_subcommand("validate", "Check predictions against the inventory");
    CLI::App* evaluate = app.add_subcommand("evaluate", "Micro-averaged extraction metrics");
    evaluate->add_option("--span-threshold", ov.span_threshold,
                         "token-Jaccard threshold for span matches");
    evaluate->add_flag("--taxonomy", ov.taxonomy, "also emit the error-taxonomy report");
    CLI::App* refine = app.add_subcommand("refine", "Run an inference-refinement strategy");
    refine->add_option("--strategy", ov.strategy,
                       "cot-sr | self-consistency | hybrid | selector | cgra | seed-merge | rerank");
    refine->add_option("--gateway-mode", ov.gateway_mode, "http | mock");
    CLI::App* align = app.add_subcommand("align-loss", "Alignment objective over exported vectors");
    align->add_option("--sft-loss", ov.sft_loss, "supervised loss to compose into the total");
    align->add_option("--prior", ov.prior, "identity | semantic");
    CLI::App* prior = app.add_subcommand("prior-build", "Build the semantic similarity prior");
    CLI::App* prefs = app.add_subcommand("prefs", "Generate synthetic preference pairs");
    CLI::App* avg = app.add_subcommand("avg-checkpoints", "Parameter-wise checkpoint average");
    CLI::App* stats = app.add_subcommand("stats", "Corpus statistics report");
    CLI::App* diagnose = app.add_subcommand("diagnose", "Schema-adherence diagnostics");

    for (CLI::App* cmd :
         {parse, validate, evaluate, refine, align, prior, prefs, avg, stats, diagnose})
        add_common_flags(cmd, ov);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : eppc::exit_code::usage;
    }

    try {
        eppc::pipeline_config cfg = build_config(ov);
        std::string command = app.get_subcommands().front()->get_name();
        return eppc::run_pipeline(cfg, command, eppc::pipeline_config_to_json(cfg));
    } catch (const eppc::data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return eppc::exit_code::data;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return eppc::exit_code::usage;
    }
}
