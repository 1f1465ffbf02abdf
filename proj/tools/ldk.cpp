// Command-line front end: dataset generation, two-stage training, sampling,
// reconstruction, metrics, the factor sweep, and throughput measurement.
// Every subcommand reads one sectioned config (file + --set overrides), and
// every artifact it writes embeds {version, config digest, seed}.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ldk/config.hpp"
#include "ldk/eval.hpp"
#include "ldk/pipelines.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ldk;

namespace {

// Everything the config file can say, resolved with defaults. Each command
// consumes the whole document so a shared reference config never trips the
// unknown-key check via half-read sections.
struct CliConfig {
    TrainConfig train;
    SamplerOpts sample;
    int eval_samples = 160;
    int sweep_seeds = 3;
    int sweep_ddim_steps = 20;
    std::vector<int> throughput_grid = {10, 50, 200};
    int throughput_count = 4;
};

CliConfig read_cli_config(Config& doc) {
    CliConfig c;
    TrainConfig& t = c.train;

    t.data.count = static_cast<int>(doc.get_int("data", "count", t.data.count));
    t.data.resolution = static_cast<int>(doc.get_int("data", "resolution", t.data.resolution));
    t.data.seed = static_cast<uint64_t>(doc.get_int("data", "seed", 0));

    t.sched = schedule_kind_from(doc.get_str("schedule", "kind", "linear_beta"));
    t.T = static_cast<int>(doc.get_int("schedule", "T", t.T));
    t.beta_start = doc.get_real("schedule", "beta_start", t.beta_start);
    t.beta_end = doc.get_real("schedule", "beta_end", t.beta_end);

    AutoencoderConfig& ae = t.ae;
    ae.f = static_cast<int>(doc.get_int("autoencoder", "f", ae.f));
    ae.in_ch = static_cast<int>(doc.get_int("autoencoder", "in_ch", ae.in_ch));
    ae.z_ch = static_cast<int>(doc.get_int("autoencoder", "z_ch", ae.z_ch));
    ae.base = static_cast<int>(doc.get_int("autoencoder", "base", ae.base));
    ae.max_width = static_cast<int>(doc.get_int("autoencoder", "max_width", ae.max_width));
    ae.res_blocks = static_cast<int>(doc.get_int("autoencoder", "res_blocks", ae.res_blocks));
    ae.gn_groups = static_cast<int>(doc.get_int("autoencoder", "gn_groups", ae.gn_groups));
    ae.reg = latent_reg_from(doc.get_str("autoencoder", "reg", "kl"));
    ae.codebook_size =
        static_cast<int>(doc.get_int("autoencoder", "codebook_size", ae.codebook_size));

    t.disc.base = static_cast<int>(doc.get_int("disc", "base", t.disc.base));
    t.disc.gn_groups = static_cast<int>(doc.get_int("disc", "gn_groups", t.disc.gn_groups));

    AeLossWeights& w = t.loss;
    w.w_kl = doc.get_real("ae_loss", "w_kl", w.w_kl);
    w.w_vq = doc.get_real("ae_loss", "w_vq", w.w_vq);
    w.beta_commit = doc.get_real("ae_loss", "beta_commit", w.beta_commit);
    w.w_adv = doc.get_real("ae_loss", "w_adv", w.w_adv);
    w.adv_warmup = doc.get_int("ae_loss", "adv_warmup", w.adv_warmup);
    w.w_feat = doc.get_real("ae_loss", "w_feat", w.w_feat);

    UnetConfig& u = t.unet;
    u.base = static_cast<int>(doc.get_int("unet", "base", u.base));
    u.ch_mult = detail::csv_to_ints(doc.get_str("unet", "ch_mult", detail::ints_to_csv(u.ch_mult)));
    u.res_blocks = static_cast<int>(doc.get_int("unet", "res_blocks", u.res_blocks));
    u.gn_groups = static_cast<int>(doc.get_int("unet", "gn_groups", u.gn_groups));
    u.time_dim = static_cast<int>(doc.get_int("unet", "time_dim", u.time_dim));
    u.heads = static_cast<int>(doc.get_int("unet", "heads", u.heads));
    u.attn_levels = static_cast<int>(doc.get_int("unet", "attn_levels", u.attn_levels));
    u.d_tau = static_cast<int>(doc.get_int("unet", "d_tau", u.d_tau));
    u.mlp_mult = static_cast<int>(doc.get_int("unet", "mlp_mult", u.mlp_mult));

    TokenEncoderConfig& tok = t.tok;
    tok.blocks = static_cast<int>(doc.get_int("token_encoder", "blocks", tok.blocks));
    tok.heads = static_cast<int>(doc.get_int("token_encoder", "heads", tok.heads));
    tok.mlp_mult = static_cast<int>(doc.get_int("token_encoder", "mlp_mult", tok.mlp_mult));
    tok.max_tokens = static_cast<int>(doc.get_int("token_encoder", "max_tokens", tok.max_tokens));

    t.task = task_from(doc.get_str("train", "task", "unconditional"));
    t.lr = doc.get_real("train", "lr", t.lr);
    t.adam_beta1 = doc.get_real("train", "adam_beta1", t.adam_beta1);
    t.adam_beta2 = doc.get_real("train", "adam_beta2", t.adam_beta2);
    t.batch = static_cast<int>(doc.get_int("train", "batch", t.batch));
    t.steps = doc.get_int("train", "steps", t.steps);
    t.cond_dropout = doc.get_real("train", "cond_dropout", t.cond_dropout);
    t.seed = static_cast<uint64_t>(doc.get_int("train", "seed", 0));
    t.rescale_latents = doc.get_bool("train", "rescale_latents", t.rescale_latents);
    t.holdout = static_cast<int>(doc.get_int("train", "holdout", t.holdout));
    t.log_every = static_cast<int>(doc.get_int("train", "log_every", t.log_every));
    t.vq_reseed_every =
        static_cast<int>(doc.get_int("train", "vq_reseed_every", t.vq_reseed_every));

    SamplerOpts& s = c.sample;
    s.count = static_cast<int>(doc.get_int("sample", "count", s.count));
    s.ddim = doc.get_bool("sample", "ddim", s.ddim);
    s.ddim_steps = static_cast<int>(doc.get_int("sample", "ddim_steps", s.ddim_steps));
    s.eta = doc.get_real("sample", "eta", s.eta);
    s.cfg_scale = doc.get_real("sample", "cfg_scale", s.cfg_scale);
    s.resolution_multiplier =
        static_cast<int>(doc.get_int("sample", "multiplier", s.resolution_multiplier));
    s.seed = static_cast<uint64_t>(doc.get_int("sample", "seed", 0));

    c.eval_samples = static_cast<int>(doc.get_int("eval", "samples", c.eval_samples));
    c.sweep_seeds = static_cast<int>(doc.get_int("eval", "sweep_seeds", c.sweep_seeds));
    c.sweep_ddim_steps =
        static_cast<int>(doc.get_int("eval", "sweep_ddim_steps", c.sweep_ddim_steps));
    c.throughput_grid = detail::csv_to_ints(
        doc.get_str("eval", "throughput_grid", detail::ints_to_csv(c.throughput_grid)));
    c.throughput_count =
        static_cast<int>(doc.get_int("eval", "throughput_count", c.throughput_count));
    return c;
}

struct GlobalOpts {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<int64_t> seed;
    int threads = 0;  // 0 = LDK_THREADS env, then 1
    bool deterministic = false;
};

void add_global_opts(CLI::App* cmd, GlobalOpts& g) {
    cmd->add_option("--config", g.config_path, "sectioned key=value config file");
    cmd->add_option("--set", g.sets, "override, e.g. --set train.steps=100")->take_all();
    cmd->add_option("--seed", g.seed, "override every seed in the config");
    cmd->add_option("--threads", g.threads, "worker threads (env LDK_THREADS, default 1)");
    cmd->add_flag("--deterministic", g.deterministic,
                  "bit-reproducible mode: single-threaded, no wall-clock in reports");
}

// Resolve config file + --set overrides + --seed into one document. The
// returned text is what gets digested and embedded everywhere.
Config resolve_config(const GlobalOpts& g) {
    Config doc = g.config_path.empty() ? Config{} : Config::load(g.config_path);
    for (const std::string& s : g.sets) doc.set_override(s);
    if (g.seed) {
        doc.set_int("data", "seed", *g.seed);
        doc.set_int("train", "seed", *g.seed);
        doc.set_int("sample", "seed", *g.seed);
    }
    return doc;
}

int resolve_threads(const GlobalOpts& g) {
    if (g.deterministic) return 1;
    if (g.threads > 0) return g.threads;
    if (const char* env = std::getenv("LDK_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

std::map<std::string, std::string> artifact_stamp(const Config& doc, uint64_t seed) {
    return {{"ldk.version", kVersion},
            {"ldk.config", doc.digest_hex()},
            {"ldk.seed", std::to_string(seed)}};
}

json report_header(const Config& doc, uint64_t seed) {
    return json{{"version", kVersion}, {"config_digest", doc.digest_hex()}, {"seed", seed}};
}

// Training/evaluation logs: newline-delimited JSON, one record per entry.
LogFn jsonl_logger(std::ostream* out) {
    return [out](const LogEntry& e) {
        json rec{{"step", e.step}};
        for (const auto& [k, v] : e.values) rec[k] = v;
        *out << rec.dump() << "\n";
        out->flush();
    };
}

void write_image_png(const std::string& path, const Tensor<float>& img,
                     const std::map<std::string, std::string>& stamp) {
    const Tensor<float>* chw = &img;
    Tensor<float> sliced;
    if (img.ndim() == 4) {
        LDK_CHECK(img.dim(0) == 1, ErrKind::shape, "cli", "expected a single image");
        sliced = Tensor<float>({img.dim(1), img.dim(2), img.dim(3)});
        std::copy_n(img.data(), img.size(), sliced.data());
        chw = &sliced;
    }
    PngImage png;
    png.width = chw->dim(2);
    png.height = chw->dim(1);
    png.rgb = image_to_bytes(*chw);
    png.text = stamp;
    write_png(path, png);
}

Tensor<float> read_image_png(const std::string& path) {
    PngImage png = read_png(path);
    return image_from_bytes<float>(png.rgb, png.height, png.width);
}

// Load every non-mask PNG in a directory as a [N,3,H,W] batch (sorted by
// name so the order is stable across platforms).
Tensor<float> load_image_dir(const std::string& dir) {
    std::vector<fs::path> files;
    LDK_CHECK(fs::is_directory(dir), ErrKind::io, "cli", dir + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        if (e.path().extension() == ".png" &&
            name.find("_mask.png") == std::string::npos)
            files.push_back(e.path());
    }
    LDK_CHECK(!files.empty(), ErrKind::io, "cli", "no PNG images under " + dir);
    std::sort(files.begin(), files.end());
    Tensor<float> first = read_image_png(files[0].string());
    Tensor<float> out({static_cast<int>(files.size()), 3, first.dim(1), first.dim(2)});
    std::copy_n(first.data(), first.size(), out.data());
    for (size_t i = 1; i < files.size(); ++i) {
        Tensor<float> img = read_image_png(files[i].string());
        LDK_CHECK(img.shape() == first.shape(), ErrKind::shape, "cli",
                  "image sizes differ under " + dir);
        std::copy_n(img.data(), img.size(), out.data() + static_cast<int64_t>(i) * img.size());
    }
    return out;
}

// Conditioning for `sample`: class/caption from flags, spatial maps built
// from a dataset sample at the (multiplied) resolution.
struct CondFlags {
    int class_id = -1;
    std::string caption;
    int cond_index = -1;
};

TaskCond<float> build_cond(const Ldm<float>& ldm, const CliConfig& cfg, const CondFlags& flags,
                           int multiplier) {
    TaskCond<float> cond;
    switch (ldm.task) {
        case TaskKind::unconditional:
            break;
        case TaskKind::class_conditional:
            LDK_CHECK(flags.class_id >= 0, ErrKind::config, "cli",
                      "class-conditional model needs --class-id");
            cond.class_id = flags.class_id;
            break;
        case TaskKind::token_conditional: {
            LDK_CHECK(!flags.caption.empty(), ErrKind::config, "cli",
                      "token-conditional model needs --caption");
            std::string word;
            for (char ch : flags.caption + " ") {
                if (ch == ' ') {
                    if (!word.empty()) cond.tokens.push_back(vocab_id(word));
                    word.clear();
                } else {
                    word += ch;
                }
            }
            break;
        }
        default: {  // spatial tasks draw their conditioning from the dataset
            LDK_CHECK(flags.cond_index >= 0, ErrKind::config, "cli",
                      "spatial task needs --cond-index into the dataset");
            DatasetSpec spec = cfg.train.data;
            spec.resolution *= multiplier;
            spec.count = std::max(spec.count, flags.cond_index + 1);
            Sample<float> s = make_sample<float>(spec, flags.cond_index);
            TaskSample<float> task;
            if (ldm.task == TaskKind::super_resolution) {
                task = build_sr_sample(s, ldm.f);
            } else if (ldm.task == TaskKind::inpainting) {
                Rng mask_rng = Rng(spec.seed, "cli_mask").child(flags.cond_index);
                task = build_inpaint_sample(s, ldm.f, mask_rng);
            } else {
                task = build_semantic_sample(s, ldm.f);
            }
            cond.cond_map = task.cond_map;
        }
    }
    return cond;
}

int run_make_dataset(const GlobalOpts& g, const std::string& out_dir) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();
    write_dataset<float>(out_dir, cfg.train.data, artifact_stamp(doc, cfg.train.data.seed));
    std::cout << "wrote " << cfg.train.data.count << " samples at "
              << cfg.train.data.resolution << "x" << cfg.train.data.resolution << " to "
              << out_dir << " (config " << doc.digest_hex() << ")\n";
    return 0;
}

int run_train_ae(const GlobalOpts& g, const std::string& out_path,
                 const std::string& log_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    std::ofstream log_file;
    if (!log_path.empty()) log_file.open(log_path);
    std::ostream* log_to = log_path.empty() ? &std::cerr : &log_file;
    AeTrainResult<float> r = train_autoencoder<float>(cfg.train, jsonl_logger(log_to));

    save_autoencoder_checkpoint(out_path, r.ae, cfg.train.seed, doc.serialize());

    std::vector<Sample<float>> held;
    for (int i = cfg.train.data.count - cfg.train.holdout; i < cfg.train.data.count; ++i)
        held.push_back(make_sample<float>(cfg.train.data, i));
    json summary{{"checkpoint", out_path}, {"final_recon_l1", r.final_recon}};
    if (!held.empty()) {
        auto [p, s] = eval_autoencoder(r.ae, held);
        summary["holdout_psnr"] = p;
        summary["holdout_ssim"] = s;
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

int run_train_ldm(const GlobalOpts& g, const std::string& first_stage_path,
                  const std::string& out_path, const std::string& log_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    std::optional<Autoencoder<float>> stage;
    if (!first_stage_path.empty()) stage = load_autoencoder_checkpoint(first_stage_path);

    std::ofstream log_file;
    if (!log_path.empty()) log_file.open(log_path);
    std::ostream* log_to = log_path.empty() ? &std::cerr : &log_file;
    LdmTrainResult<float> r =
        train_ldm<float>(cfg.train, stage ? &*stage : nullptr, jsonl_logger(log_to));

    save_ldm_checkpoint(out_path, r.ldm, stage ? &*stage : nullptr, cfg.train.seed,
                        doc.serialize());
    std::cout << json{{"checkpoint", out_path}, {"final_mse", r.final_loss}}.dump() << "\n";
    return 0;
}

int run_finetune(const GlobalOpts& g, const std::string& init_path, int multiplier,
                 const std::string& out_path, const std::string& log_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();
    LDK_CHECK(multiplier == 1 || multiplier == 2 || multiplier == 4, ErrKind::config, "cli",
              "--resolution-multiplier must be 1, 2, or 4");

    LoadedLdm init = load_ldm_checkpoint(init_path);
    cfg.train.task = init.ldm.task;
    cfg.train.data.resolution *= multiplier;

    std::ofstream log_file;
    if (!log_path.empty()) log_file.open(log_path);
    std::ostream* log_to = log_path.empty() ? &std::cerr : &log_file;
    Autoencoder<float>* stage = init.first_stage ? &*init.first_stage : nullptr;
    LdmTrainResult<float> r =
        train_ldm<float>(cfg.train, stage, jsonl_logger(log_to), &init.ldm);

    save_ldm_checkpoint(out_path, r.ldm, stage, cfg.train.seed, doc.serialize());
    std::cout << json{{"checkpoint", out_path}, {"final_mse", r.final_loss}}.dump() << "\n";
    return 0;
}

int run_sample(const GlobalOpts& g, const std::string& ckpt_path, const std::string& out_dir,
               const CondFlags& flags, double guide_scale, const std::string& guide_target,
               const std::string& guide_transform) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    LoadedLdm loaded = load_ldm_checkpoint(ckpt_path);
    Autoencoder<float>* stage = loaded.first_stage ? &*loaded.first_stage : nullptr;
    TaskCond<float> cond =
        build_cond(loaded.ldm, cfg, flags, cfg.sample.resolution_multiplier);

    std::optional<GuiderSpec<float>> guider;
    if (!guide_target.empty()) {
        GuiderSpec<float> spec;
        spec.kind = GuiderKind::image;
        spec.scale = guide_scale;
        Tensor<float> chw = read_image_png(guide_target);
        spec.target = Tensor<float>({1, chw.dim(0), chw.dim(1), chw.dim(2)});
        std::copy_n(chw.data(), chw.size(), spec.target.data());
        if (guide_transform == "identity")
            spec.transform = GuiderTransform::identity;
        else if (guide_transform == "down2")
            spec.transform = GuiderTransform::bicubic_downsample_2x;
        else if (guide_transform == "down4")
            spec.transform = GuiderTransform::bicubic_downsample_4x;
        else
            fail(ErrKind::config, "cli", "unknown --guide-transform " + guide_transform);
        guider = spec;
    }

    fs::create_directories(out_dir);
    std::vector<Tensor<float>> images =
        sample_task(loaded.ldm, stage, cond, cfg.sample, guider ? &*guider : nullptr);
    std::map<std::string, std::string> stamp = artifact_stamp(doc, cfg.sample.seed);
    for (size_t i = 0; i < images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04zu.png", i);
        write_image_png((fs::path(out_dir) / name).string(), images[i], stamp);
    }
    std::cout << "wrote " << images.size() << " samples to " << out_dir << "\n";
    return 0;
}

int run_reconstruct(const GlobalOpts& g, const std::string& ckpt_path,
                    const std::string& image_path, int index, const std::string& out_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    Autoencoder<float> ae = load_autoencoder_checkpoint(ckpt_path);
    Tensor<float> chw;
    if (!image_path.empty()) {
        chw = read_image_png(image_path);
    } else {
        LDK_CHECK(index >= 0, ErrKind::config, "cli", "need --image or --index");
        chw = make_sample<float>(cfg.train.data, index).image;
    }
    Tensor<float> x({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    std::copy_n(chw.data(), chw.size(), x.data());

    Tensor<float> recon = decode(ae, encode(ae, x, nullptr).z);
    if (!out_path.empty())
        write_image_png(out_path, recon, artifact_stamp(doc, cfg.train.seed));
    json rec{{"psnr", psnr(recon, x, 2.0)}, {"ssim", ssim(recon, x, 2.0)}};
    std::cout << rec.dump() << "\n";
    return 0;
}

int run_evaluate(const GlobalOpts& g, const std::string& dir_a, const std::string& dir_b,
                 const std::string& out_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    Tensor<float> a = load_image_dir(dir_a);
    Tensor<float> b = load_image_dir(dir_b);
    FeatureExtractor<float> fx = make_feature_extractor<float>();
    double ffd = frechet_feature_distance(extract_features(fx, a), extract_features(fx, b));

    json row{{"name", "ffd"},
             {"value", ffd},
             {"count_a", a.dim(0)},
             {"count_b", b.dim(0)},
             {"extractor_seed", FeatureExtractorConfig{}.seed}};
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        out = &file;
    }
    *out << report_header(doc, cfg.train.data.seed).dump() << "\n" << row.dump() << "\n";
    if (!out_path.empty()) std::cout << row.dump() << "\n";
    return 0;
}

int run_sweep(const GlobalOpts& g, const std::string& f_list,
              const std::vector<std::string>& stage_specs, const std::string& out_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    std::vector<int> fs = detail::csv_to_ints(f_list);
    std::map<int, Autoencoder<float>> stages;
    for (const std::string& spec : stage_specs) {
        size_t eq = spec.find('=');
        LDK_CHECK(eq != std::string::npos, ErrKind::config, "cli",
                  "--stage expects f=checkpoint, got " + spec);
        int f = std::stoi(spec.substr(0, eq));
        stages.emplace(f, load_autoencoder_checkpoint(spec.substr(eq + 1)));
    }
    std::map<int, Autoencoder<float>*> stage_ptrs;
    for (auto& [f, ae] : stages) stage_ptrs[f] = &ae;

    FeatureExtractor<float> fx = make_feature_extractor<float>();
    SweepOpts opts;
    opts.n_seeds = cfg.sweep_seeds;
    opts.eval_samples = cfg.eval_samples;
    opts.ddim_steps = cfg.sweep_ddim_steps;
    std::vector<SweepRow> rows =
        ldm_f_sweep<float>(fs, cfg.train, stage_ptrs, fx, opts, jsonl_logger(&std::cerr));

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        out = &file;
    }
    *out << report_header(doc, cfg.train.seed).dump() << "\n";
    for (const SweepRow& r : rows) {
        json row{{"f", r.f},
                 {"params", r.params},
                 {"steps", r.steps},
                 {"mean_mse", r.mean_loss},
                 {"mean_ffd", r.mean_ffd},
                 {"ffd_per_seed", r.ffd_seeds}};
        *out << row.dump() << "\n";
    }
    return 0;
}

int run_throughput(const GlobalOpts& g, const std::string& ckpt_path, const CondFlags& flags,
                   const std::string& out_path) {
    Config doc = resolve_config(g);
    CliConfig cfg = read_cli_config(doc);
    doc.require_all_consumed();

    LoadedLdm loaded = load_ldm_checkpoint(ckpt_path);
    // run the model's unconditional branch so every task kind is measurable
    // without task-specific inputs
    CondFlags null_flags = flags;
    if (loaded.ldm.task == TaskKind::class_conditional && null_flags.class_id < 0)
        null_flags.class_id = 0;
    if (loaded.ldm.task == TaskKind::token_conditional && null_flags.caption.empty())
        null_flags.caption = "a";
    double scale = loaded.ldm.task == TaskKind::unconditional ? 1.0 : 0.0;
    TaskCond<float> cond;
    if (task_cond_mode(loaded.ldm.task) == CondMode::spatial_concat) {
        cond.cond_map = Tensor<float>({task_cond_channels(loaded.ldm.task),
                                       loaded.ldm.latent_h, loaded.ldm.latent_w});
    } else {
        cond = build_cond(loaded.ldm, cfg, null_flags, 1);
    }
    DenoiserFn<float> fn = task_denoiser(loaded.ldm, cond, scale);

    Shape shape{1, loaded.ldm.z_ch, loaded.ldm.latent_h, loaded.ldm.latent_w};
    Rng rng(cfg.sample.seed, "throughput");
    std::vector<MetricReport> rows =
        throughput(fn, shape, loaded.ldm.ns, cfg.throughput_grid, cfg.throughput_count, rng,
                   g.deterministic);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        out = &file;
    }
    *out << report_header(doc, cfg.sample.seed).dump() << "\n";
    for (const MetricReport& r : rows) {
        json row{{"name", r.name}, {"count", r.count}, {"seed", r.seed}};
        if (!g.deterministic) {
            row["wall_ms"] = r.wall_ms;
            row["per_sec"] = r.per_sec;
        }
        *out << row.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale latent diffusion toolkit"};
    app.require_subcommand(1);

    GlobalOpts g;
    std::string out, log_path, first_stage, ckpt, image_path, dir_a, dir_b;
    std::string f_list = "1,2,4,8", guide_target, guide_transform = "down2";
    std::vector<std::string> stage_specs;
    CondFlags cond_flags;
    int index = -1, multiplier = 2;
    double guide_scale = 1.0;

    CLI::App* c_make = app.add_subcommand("make-dataset", "generate the synthetic dataset");
    add_global_opts(c_make, g);
    c_make->add_option("--out", out, "output directory")->required();

    CLI::App* c_tae = app.add_subcommand("train-ae", "train the first-stage autoencoder");
    add_global_opts(c_tae, g);
    c_tae->add_option("--out", out, "checkpoint path")->required();
    c_tae->add_option("--log", log_path, "training log (JSON lines)");

    CLI::App* c_tldm = app.add_subcommand("train-ldm", "train the latent denoiser");
    add_global_opts(c_tldm, g);
    c_tldm->add_option("--first-stage", first_stage, "autoencoder checkpoint (omit for f=1)");
    c_tldm->add_option("--out", out, "checkpoint path")->required();
    c_tldm->add_option("--log", log_path, "training log (JSON lines)");

    CLI::App* c_ft = app.add_subcommand("finetune", "continue training, optionally upscaled");
    add_global_opts(c_ft, g);
    c_ft->add_option("--init", ckpt, "denoiser checkpoint to continue from")->required();
    c_ft->add_option("--resolution-multiplier", multiplier, "data resolution multiplier");
    c_ft->add_option("--out", out, "checkpoint path")->required();
    c_ft->add_option("--log", log_path, "training log (JSON lines)");

    CLI::App* c_sample = app.add_subcommand("sample", "draw images from a trained model");
    add_global_opts(c_sample, g);
    c_sample->add_option("--ckpt", ckpt, "denoiser checkpoint")->required();
    c_sample->add_option("--out", out, "output directory")->required();
    c_sample->add_option("--class-id", cond_flags.class_id, "class id (class task)");
    c_sample->add_option("--caption", cond_flags.caption, "caption words (token task)");
    c_sample->add_option("--cond-index", cond_flags.cond_index,
                         "dataset index supplying the conditioning map (spatial tasks)");
    c_sample->add_option("--guide-scale", guide_scale, "image-guider strength");
    c_sample->add_option("--guide-target", guide_target, "image-guider target PNG");
    c_sample->add_option("--guide-transform", guide_transform,
                         "guider transform: identity | down2 | down4");

    CLI::App* c_rec = app.add_subcommand("reconstruct", "autoencoder round trip + metrics");
    add_global_opts(c_rec, g);
    c_rec->add_option("--ckpt", ckpt, "autoencoder checkpoint")->required();
    c_rec->add_option("--image", image_path, "input PNG (else --index into the dataset)");
    c_rec->add_option("--index", index, "dataset sample index");
    c_rec->add_option("--out", out, "reconstruction PNG");

    CLI::App* c_eval = app.add_subcommand("evaluate", "feature-Fréchet distance between sets");
    add_global_opts(c_eval, g);
    c_eval->add_option("--a", dir_a, "first image directory")->required();
    c_eval->add_option("--b", dir_b, "second image directory")->required();
    c_eval->add_option("--out", out, "report file (JSON lines)");

    CLI::App* c_sweep = app.add_subcommand("sweep", "train and score one denoiser per factor");
    add_global_opts(c_sweep, g);
    c_sweep->add_option("--f", f_list, "comma-separated downsampling factors");
    c_sweep->add_option("--stage", stage_specs, "first stage per factor, f=checkpoint")
        ->take_all();
    c_sweep->add_option("--out", out, "report file (JSON lines)");

    CLI::App* c_tp = app.add_subcommand("throughput", "DDIM sampling speed across step grids");
    add_global_opts(c_tp, g);
    c_tp->add_option("--ckpt", ckpt, "denoiser checkpoint")->required();
    c_tp->add_option("--out", out, "report file (JSON lines)");

    CLI11_PARSE(app, argc, argv);

    try {
        Eigen::setNbThreads(resolve_threads(g));
        if (c_make->parsed()) return run_make_dataset(g, out);
        if (c_tae->parsed()) return run_train_ae(g, out, log_path);
        if (c_tldm->parsed()) return run_train_ldm(g, first_stage, out, log_path);
        if (c_ft->parsed()) return run_finetune(g, ckpt, multiplier, out, log_path);
        if (c_sample->parsed())
            return run_sample(g, ckpt, out, cond_flags, guide_scale, guide_target,
                              guide_transform);
        if (c_rec->parsed()) return run_reconstruct(g, ckpt, image_path, index, out);
        if (c_eval->parsed()) return run_evaluate(g, dir_a, dir_b, out);
        if (c_sweep->parsed()) return run_sweep(g, f_list, stage_specs, out);
        if (c_tp->parsed()) return run_throughput(g, ckpt, cond_flags, out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: cli: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
