#include "CLI11.hpp"
#include "json.hpp"

#include "npolar/evaluator.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace npolar;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

json default_config() {
    return json{
        {"n", 16},
        {"k", 8},
        {"ell", 4},
        {"construction", "bhattacharyya"},
        {"design_erasure", 0.5},
        {"sequence_file", ""},
        {"enc_hidden", 64},
        {"dec_hidden", 128},
        {"hidden_layers", 3},
        {"norm_mode", "running"},
        {"parallel", false},
        {"feedback", "hard"},
        {"preset", "desk"},
        {"batch", 512},
        {"epochs", 150},
        {"steps_dec", 100},
        {"steps_enc", 10},
        {"snr_enc_db", 0.0},
        {"snr_dec_db", -2.0},
        {"lr_enc", 1e-4},
        {"lr_dec", 1e-4},
        {"grad_accum", 1},
        {"curriculum", true},
        {"stage1_epochs", 20},
        {"finetune_kind", "ste"},
        {"joint", false},
        {"channel", "awgn"},
        {"rho", 0.0},
        {"sigma_b", 0.0},
        {"sigma_b_scale", 0.0},
        {"decoder", "auto"},
        {"snr_sweep", json::array({-2.0, 0.0, 2.0})},
        {"min_block_errors", 100},
        {"max_blocks", 100000},
        {"eval_batch", 256},
        {"analysis", "distance"},
        {"num_pairs", 10000},
        {"num_blocks", 20000},
        {"bins", 40},
        {"analyze_snr_db", 0.0},
        {"checkpoint_in", ""},
        {"checkpoint_out", ""},
        {"report_out", ""},
        {"run_dir", "runs"},
        {"seed", 0},
    };
}

json load_config_file(const std::string& path, const json& defaults) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json file;
    try {
        file = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error: " + std::string(e.what()));
    }
    for (auto& [key, value] : file.items()) {
        if (!defaults.contains(key))
            throw std::runtime_error("unknown config key: " + key);
        (void)value;
    }
    return file;
}

CodeLayout layout_from(const json& cfg) {
    int n = cfg.at("n"), k = cfg.at("k"), ell = cfg.at("ell");
    std::string method = cfg.at("construction");
    ReliabilityOrder order;
    if (method == "bhattacharyya") {
        order = construct_reliability(n, cfg.at("design_erasure"));
    } else if (method == "file") {
        order = load_reliability_file(cfg.at("sequence_file"), n);
    } else {
        throw std::runtime_error("unknown construction method: " + method);
    }
    return make_layout(n, k, ell, order);
}

TrainPlan plan_from(const json& cfg) {
    TrainPlan plan = cfg.at("preset") == "paper" ? TrainPlan::paper_preset() : TrainPlan{};
    plan.batch = cfg.at("batch");
    plan.epochs = cfg.at("epochs");
    plan.steps_dec = cfg.at("steps_dec");
    plan.steps_enc = cfg.at("steps_enc");
    plan.snr_enc_db = cfg.at("snr_enc_db");
    plan.snr_dec_db = cfg.at("snr_dec_db");
    plan.lr_enc = cfg.at("lr_enc");
    plan.lr_dec = cfg.at("lr_dec");
    plan.grad_accum = cfg.at("grad_accum");
    plan.seed = cfg.at("seed").get<uint64_t>();
    std::string ch = cfg.at("channel");
    if (ch == "awgn")
        plan.channel.kind = ChannelKind::awgn;
    else if (ch == "rayleigh")
        plan.channel.kind = ChannelKind::rayleigh_fast;
    else if (ch == "bursty")
        plan.channel.kind = ChannelKind::bursty;
    else
        throw std::runtime_error("unknown channel: " + ch);
    plan.channel.rho = cfg.at("rho");
    plan.channel.sigma_b = cfg.at("sigma_b");
    plan.channel.sigma_b_scale = cfg.at("sigma_b_scale");
    return plan;
}

FeedbackMode feedback_from(const json& cfg) {
    std::string fb = cfg.at("feedback");
    if (fb == "hard") return FeedbackMode::hard;
    if (fb == "soft") return FeedbackMode::soft;
    throw std::runtime_error("unknown feedback mode: " + fb);
}

fs::path make_run_dir(const json& cfg) {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%S", std::gmtime(&t));
    std::string base =
        std::string(stamp) + "-seed" + std::to_string(cfg.at("seed").get<uint64_t>());
    fs::path root(cfg.at("run_dir").get<std::string>());
    fs::path dir = root / base;
    for (int i = 1; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write: " + path.string());
    out << text;
}

// every artifact carries the exact run configuration as a comment prefix
std::string with_config_header(const json& cfg, const std::string& body) {
    return "# config: " + cfg.dump() + "\n" + body;
}

NeuralCode code_from(const json& cfg, const CodeLayout& layout) {
    std::string in = cfg.at("checkpoint_in");
    NeuralCode code =
        in.empty() ? NeuralCode::make(layout, cfg.at("enc_hidden"), cfg.at("dec_hidden"),
                                      cfg.at("hidden_layers"), cfg.at("seed").get<uint64_t>(),
                                      cfg.at("parallel"))
                   : load_checkpoint(in);
    if (!in.empty() && (code.layout.n != layout.n || code.layout.k != layout.k ||
                        code.layout.ell != layout.ell))
        throw std::runtime_error("checkpoint layout does not match requested (n, k, ell)");
    if (in.empty()) code.stats.mode = norm_mode_from_string(cfg.at("norm_mode"));
    return code;
}

void save_outputs(const json& cfg, const fs::path& dir, const NeuralCode& code,
                  const TrainResult& result) {
    std::string out = cfg.at("checkpoint_out");
    fs::path ckpt = out.empty() ? dir / "checkpoint.json" : fs::path(out);
    save_checkpoint(code, ckpt.string());
    std::string trace = "step,phase,loss\n";
    char buf[64];
    for (const auto& rec : result.trace) {
        std::snprintf(buf, sizeof(buf), "%ld,%c,%.17g", rec.step, rec.phase, rec.loss);
        trace += buf;
        trace += '\n';
    }
    write_text(dir / "loss_trace.csv", with_config_header(cfg, trace));
}

double final_loss(const TrainResult& r) {
    for (auto it = r.trace.rbegin(); it != r.trace.rend(); ++it)
        if (it->phase == 'd') return it->loss;
    return r.trace.empty() ? 0.0 : r.trace.back().loss;
}

int cmd_construct(const json& cfg) {
    CodeLayout layout = layout_from(cfg);
    json info = json::array();
    for (int i : layout.info) info.push_back(i);
    json frozen = json::array();
    for (int i : layout.frozen) frozen.push_back(i);
    std::string out = cfg.at("checkpoint_out");
    if (!out.empty()) {
        NeuralCode code = code_from(cfg, layout);
        save_checkpoint(code, out);
    }
    std::cout << json{{"command", "construct"},
                      {"seed", cfg.at("seed")},
                      {"n", layout.n},
                      {"k", layout.k},
                      {"ell", layout.ell},
                      {"info", info},
                      {"frozen", frozen}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_train(const json& cfg) {
    CodeLayout layout = layout_from(cfg);
    NeuralCode code = code_from(cfg, layout);
    TrainPlan plan = plan_from(cfg);
    fs::path dir = make_run_dir(cfg);
    write_text(dir / "config.json", cfg.dump(1) + "\n");

    json summary{{"command", "train"}, {"seed", cfg.at("seed")}};
    if (cfg.at("curriculum").get<bool>() && cfg.at("checkpoint_in").get<std::string>().empty()) {
        TrainPlan s1 = plan;
        s1.epochs = cfg.at("stage1_epochs");
        KernelStore store =
            curriculum_stage1(layout.ell, s1, cfg.at("enc_hidden"), cfg.at("dec_hidden"),
                              cfg.at("hidden_layers"));
        Stage2Audit audit = curriculum_stage2_init(code, store);
        json mapping = json::array();
        for (const auto& e : audit.entries)
            mapping.push_back(json{{"level", e.level}, {"node", e.node}, {"source_j", e.source_j}});
        summary["stage2_transplants"] = mapping;
    }
    TrainResult result = train_alternating(code, plan);
    save_outputs(cfg, dir, code, result);
    summary["steps"] = result.steps;
    summary["final_loss"] = final_loss(result);
    summary["aborted_nan"] = result.aborted_nan;
    summary["run_dir"] = dir.string();
    std::cout << summary.dump() << "\n";
    return result.aborted_nan ? 1 : 0;
}

int cmd_finetune(const json& cfg) {
    std::string in = cfg.at("checkpoint_in");
    if (in.empty()) throw std::runtime_error("finetune requires checkpoint_in");
    NeuralCode code = load_checkpoint(in);
    TrainPlan plan = plan_from(cfg);
    fs::path dir = make_run_dir(cfg);
    write_text(dir / "config.json", cfg.dump(1) + "\n");

    std::string kind = cfg.at("finetune_kind");
    TrainResult result;
    if (kind == "ste")
        result = finetune_ste(code, plan);
    else if (kind == "bler")
        result = finetune_bler(code, plan, BlerFinetuneKind::product_l1);
    else if (kind == "highsnr")
        result = finetune_bler(code, plan, BlerFinetuneKind::high_snr_bce);
    else if (kind == "channel")
        result = adapt_to_channel(code, plan, cfg.at("joint"));
    else
        throw std::runtime_error("unknown finetune kind: " + kind);
    save_outputs(cfg, dir, code, result);
    std::cout << json{{"command", "finetune"},
                      {"seed", cfg.at("seed")},
                      {"kind", kind},
                      {"steps", result.steps},
                      {"final_loss", final_loss(result)},
                      {"vanishing_gradient_warning", result.vanishing_gradient_warning},
                      {"run_dir", dir.string()}}
                     .dump()
              << "\n";
    return result.aborted_nan ? 1 : 0;
}

CodecOps codec_from(const json& cfg, const CodeLayout& layout, const NeuralCode* code) {
    std::string which = cfg.at("decoder");
    if (which == "auto") which = code ? "neural" : "sc";
    if (which == "sc") return classical_codec(layout);
    if (which == "minsum") return classical_codec(layout, ScMode::minsum);
    if (which == "ml") return ml_codec(layout);
    if (!code) throw std::runtime_error("decoder '" + which + "' needs checkpoint_in");
    if (which == "neural") return neural_codec(*code, feedback_from(cfg), cfg.at("parallel"));
    if (which == "hybrid") return hybrid_codec(*code, feedback_from(cfg));
    throw std::runtime_error("unknown decoder: " + which);
}

int cmd_eval(const json& cfg) {
    CodeLayout layout = layout_from(cfg);
    std::optional<NeuralCode> code;
    std::string in = cfg.at("checkpoint_in");
    if (!in.empty()) code = load_checkpoint(in);
    CodecOps codec = codec_from(cfg, code ? code->layout : layout, code ? &*code : nullptr);

    TrainPlan plan = plan_from(cfg);  // channel settings
    MonteCarloOpts opts;
    opts.min_block_errors = cfg.at("min_block_errors");
    opts.max_blocks = cfg.at("max_blocks");
    opts.batch = cfg.at("eval_batch");
    opts.seed = cfg.at("seed").get<uint64_t>();
    std::vector<double> sweep = cfg.at("snr_sweep").get<std::vector<double>>();
    std::vector<EvalRow> rows = monte_carlo(codec, plan.channel, sweep, opts);

    fs::path dir = make_run_dir(cfg);
    write_text(dir / "config.json", cfg.dump(1) + "\n");
    std::string report = with_config_header(cfg, eval_report_csv(rows));
    std::string out = cfg.at("report_out");
    fs::path report_path = out.empty() ? dir / "report.csv" : fs::path(out);
    write_text(report_path, report);

    json points = json::array();
    for (const auto& r : rows)
        points.push_back(json{{"snr_db", r.snr_db},
                              {"ber", r.ber},
                              {"bler", r.bler},
                              {"blocks", r.blocks},
                              {"one_sided", r.one_sided}});
    std::cout << json{{"command", "eval"},
                      {"seed", cfg.at("seed")},
                      {"decoder", cfg.at("decoder")},
                      {"points", points},
                      {"report", report_path.string()}}
                     .dump()
              << "\n";
    return 0;
}

int cmd_analyze(const json& cfg) {
    CodeLayout layout = layout_from(cfg);
    std::optional<NeuralCode> code;
    std::string in = cfg.at("checkpoint_in");
    if (!in.empty()) code = load_checkpoint(in);
    CodecOps codec = codec_from(cfg, code ? code->layout : layout, code ? &*code : nullptr);

    fs::path dir = make_run_dir(cfg);
    write_text(dir / "config.json", cfg.dump(1) + "\n");
    std::string analysis = cfg.at("analysis");
    json summary{{"command", "analyze"}, {"seed", cfg.at("seed")}, {"analysis", analysis}};
    fs::path report_path;
    if (analysis == "distance") {
        DistanceProfile prof =
            distance_profile(codec, cfg.at("num_pairs"), cfg.at("seed").get<uint64_t>());
        Histogram h = histogram_from_samples(prof.distances, cfg.at("bins"));
        report_path = dir / "distance_histogram.csv";
        write_text(report_path, with_config_header(cfg, histogram_csv(h)));
        summary["mean"] = prof.mean;
        summary["stddev"] = prof.stddev;
        summary["gaussian_reference_mean"] = prof.gaussian_reference_mean;
    } else if (analysis == "first-errors") {
        TrainPlan plan = plan_from(cfg);
        FirstErrorHistogram h = first_error_histogram(
            codec, plan.channel, cfg.at("analyze_snr_db"), cfg.at("num_blocks"),
            cfg.at("seed").get<uint64_t>(), cfg.at("eval_batch"));
        report_path = dir / "first_error_histogram.csv";
        write_text(report_path, with_config_header(cfg, position_histogram_csv(h)));
        summary["erroneous_blocks"] = h.erroneous_blocks;
    } else {
        throw std::runtime_error("unknown analysis: " + analysis);
    }
    summary["report"] = report_path.string();
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_decode_only(const json& cfg) {
    CodeLayout layout = layout_from(cfg);
    NeuralCode code = code_from(cfg, layout);
    // the feedback path re-encodes through the kernel nets; zeroing them makes
    // it the classical re-encoder, matching the fixed transmit side
    if (cfg.at("checkpoint_in").get<std::string>().empty()) code.zero_encoders();
    code.stats.mode = NormMode::per_codeword;
    TrainPlan plan = plan_from(cfg);
    fs::path dir = make_run_dir(cfg);
    write_text(dir / "config.json", cfg.dump(1) + "\n");

    TrainOptions opt;
    opt.classical_encoder = true;
    opt.update_encoder = false;
    TrainResult result = train_alternating(code, plan, opt);
    save_outputs(cfg, dir, code, result);
    std::cout << json{{"command", "decode-only"},
                      {"seed", cfg.at("seed")},
                      {"steps", result.steps},
                      {"final_loss", final_loss(result)},
                      {"run_dir", dir.string()}}
                     .dump()
              << "\n";
    return result.aborted_nan ? 1 : 0;
}

int cmd_inspect(const json& cfg) {
    std::string in = cfg.at("checkpoint_in");
    if (in.empty()) throw std::runtime_error("inspect requires checkpoint_in");
    NeuralCode code = load_checkpoint(in);
    size_t params = 0;
    for (DenseNet* n : code.encoder_nets()) params += n->param_count();
    size_t dec_params = 0;
    for (DenseNet* n : code.decoder_nets()) dec_params += n->param_count();
    std::cout << json{{"command", "inspect"},
                      {"seed", code.seed},
                      {"n", code.layout.n},
                      {"k", code.layout.k},
                      {"ell", code.layout.ell},
                      {"frozen", code.layout.frozen},
                      {"enc_hidden", code.enc_hidden},
                      {"dec_hidden", code.dec_hidden},
                      {"hidden_layers", code.hidden_layers},
                      {"norm_mode", to_string(code.stats.mode)},
                      {"running_mean", code.stats.mean},
                      {"running_var", code.stats.var},
                      {"parallel_leaf", code.has_parallel()},
                      {"encoder_params", params},
                      {"decoder_params", dec_params}}
                     .dump()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural large-kernel polar code workbench"};
    std::string command;
    app.add_option("command", command, "construct|train|finetune|eval|analyze|decode-only|inspect")
        ->required();
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file");
    std::vector<std::string> overrides;
    app.add_option("--set", overrides, "key=value config overrides (JSON values)");

    json cfg = default_config();
    // common fields also as direct flags
    std::map<std::string, std::string> flag_values;
    for (const char* key : {"n", "k", "ell", "seed", "epochs", "batch", "checkpoint_in",
                            "checkpoint_out", "report_out", "run_dir", "finetune_kind",
                            "decoder", "channel", "analysis"}) {
        app.add_option("--" + std::string(key), flag_values[key]);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_path.empty()) {
            json file = load_config_file(config_path, cfg);
            cfg.update(file);
        }
        auto apply = [&cfg](const std::string& key, const std::string& raw) {
            if (!cfg.contains(key)) throw std::runtime_error("unknown config key: " + key);
            try {
                cfg[key] = json::parse(raw);
            } catch (const json::parse_error&) {
                cfg[key] = raw;  // bare strings allowed
            }
        };
        for (const auto& [key, raw] : flag_values)
            if (!raw.empty()) apply(key, raw);
        for (const std::string& kv : overrides) {
            auto eq = kv.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("--set expects key=value, got: " + kv);
            apply(kv.substr(0, eq), kv.substr(eq + 1));
        }

        if (command == "construct") return cmd_construct(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "finetune") return cmd_finetune(cfg);
        if (command == "eval") return cmd_eval(cfg);
        if (command == "analyze") return cmd_analyze(cfg);
        if (command == "decode-only") return cmd_decode_only(cfg);
        if (command == "inspect") return cmd_inspect(cfg);
        throw std::runtime_error("unknown command: " + command);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
