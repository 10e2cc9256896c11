#include "iat/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"

#include "iat/image.hpp"

namespace fs = std::filesystem;

namespace iat {

std::vector<std::pair<std::string, ParamSet*>> Model::trainable_groups() {
    std::vector<std::pair<std::string, ParamSet*>> g = {{"enc", &encoder.params()},
                                                        {"gen", &filter_gen.params()},
                                                        {"reg", &reg.params()},
                                                        {"psi_main", &psi_main.params()}};
    if (psi_aux) g.emplace_back("psi_aux", &psi_aux->params());
    return g;
}

std::vector<std::pair<std::string, const ParamSet*>> Model::all_groups() const {
    std::vector<std::pair<std::string, const ParamSet*>> g = {{"enc", &encoder.params()},
                                                              {"gen", &filter_gen.params()},
                                                              {"reg", &reg.params()},
                                                              {"psi_main", &psi_main.params()},
                                                              {"omega", &omega.params()}};
    if (psi_aux) g.emplace_back("psi_aux", &psi_aux->params());
    return g;
}

Model init_model(const FullConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng enc_rng(derive_seed(cfg.train.seed, 1, 0x1A7));
    m.encoder = Encoder(cfg.enc, enc_rng);
    Rng gen_rng(derive_seed(cfg.train.seed, 2, 0x1A7));
    m.filter_gen = TargetModelGenerator(cfg.enc.out_channels(), cfg.cls.filter_size, gen_rng);
    Rng reg_rng(derive_seed(cfg.train.seed, 3, 0x1A7));
    m.reg = RegPredictor(cfg.enc.out_channels(), cfg.reg, reg_rng);

    auto kind = cfg.inst.variant == InstVariant::kVideo ? InstanceBoostingModule::Kind::kVideo
                                                        : InstanceBoostingModule::Kind::kObject;
    Rng psi_rng(derive_seed(cfg.train.seed, 4, 0x1A7));
    m.psi_main = InstanceBoostingModule(kind, cfg.enc.out_channels(), cfg.inst.F, cfg.inst.embed_dim,
                                        cfg.inst.video_pool, psi_rng);
    if (cfg.inst.variant == InstVariant::kFusedSeparated) {
        Rng aux_rng(derive_seed(cfg.train.seed, 5, 0x1A7));
        m.psi_aux = InstanceBoostingModule(InstanceBoostingModule::Kind::kObject, cfg.enc.out_channels(),
                                           cfg.inst.F, cfg.inst.embed_dim, cfg.inst.video_pool, aux_rng);
    }

    m.bank = MemoryBank(cfg.inst.K, cfg.inst.tau, cfg.inst.embed_dim);
    Rng bank_rng(derive_seed(cfg.train.seed, 6, 0x1A7));
    m.bank.randomize(bank_rng);

    m.omega = MemoryEncoder::init_from(m.encoder, cfg.train.momentum);
    return m;
}

namespace {

Box box_in_cells(const Box& box_in_crop, int crop_size, int cells) {
    return box_in_crop.scaled(static_cast<double>(cells) / crop_size);
}

// Dispatches the configured instance granularity. The fused variants run
// an object-architecture module on the whole map for the video-level path.
Var instance_embedding(Graph& g, const Model& m, const BoundParams& bp_main, const BoundParams* bp_aux,
                       Var features, const Box& box_in_crop) {
    const FullConfig& cfg = m.cfg;
    Box cells_box = box_in_cells(box_in_crop, cfg.enc.crop_size, cfg.enc.feature_cells());
    switch (cfg.inst.variant) {
        case InstVariant::kVideo:
            return m.psi_main.forward(g, bp_main, features, std::nullopt);
        case InstVariant::kObject:
            return m.psi_main.forward(g, bp_main, features, cells_box);
        case InstVariant::kFusedShared:
            return fused_forward(g, m.psi_main, bp_main, m.psi_main, bp_main, features, cells_box);
        case InstVariant::kFusedSeparated:
            check_contract(m.psi_aux.has_value() && bp_aux != nullptr,
                           "instance_embedding: separated fusion needs the aux module");
            return fused_forward(g, m.psi_main, bp_main, *m.psi_aux, *bp_aux, features, cells_box);
    }
    throw ContractError("instance_embedding: unknown variant");
}

// k+ path: search frame through the memory encoder, whole instance branch
// detached from the autodiff tape.
Tensor compute_k_plus(const Model& m, const TrainingPair& pair) {
    Tensor feats = m.omega.extract(pair.search_img);
    Graph g;
    BoundParams bp_main(g, m.psi_main.params(), false);
    std::optional<BoundParams> bp_aux;
    if (m.psi_aux) bp_aux.emplace(g, m.psi_aux->params(), false);
    Var e = instance_embedding(g, m, bp_main, bp_aux ? &*bp_aux : nullptr, g.constant(feats),
                               pair.search_box);
    Var n = l2_normalize(g, e);
    return g.val(n).clone();
}

}  // namespace

uint64_t pair_reg_seed(uint64_t seed, int64_t step, int pair_index) {
    return derive_seed(seed ^ 0x52454742ULL, static_cast<uint64_t>(step),
                       static_cast<uint64_t>(pair_index));
}

Trainer::Trainer(Model model) : model_(std::move(model)) {}

std::vector<TrainingPair> Trainer::sample_batch(const std::vector<VideoSample>& dataset) const {
    Rng rng(derive_seed(model_.cfg.train.seed, static_cast<uint64_t>(step_), 0xBA7C4));
    std::vector<TrainingPair> batch;
    batch.reserve(static_cast<size_t>(model_.cfg.train.batch_size));
    for (int i = 0; i < model_.cfg.train.batch_size; ++i)
        batch.push_back(sample_pair(dataset, model_.cfg.sampler, rng));
    return batch;
}

StepMetrics Trainer::train_step_on(const std::vector<VideoSample>& dataset) {
    return train_step(sample_batch(dataset));
}

BatchEval eval_batch(Model& model, const std::vector<TrainingPair>& batch, int64_t step,
                     bool update_bank, bool want_grads, const ContrastiveInputs* frozen) {
    check_contract(!batch.empty(), "train_step: empty batch");
    const FullConfig& cfg = model.cfg;
    int crop = cfg.enc.crop_size;
    int cells = cfg.enc.feature_cells();
    int b = static_cast<int>(batch.size());
    const LossWeights& w = cfg.train.weights;
    bool use_inst = w.ins > 0.0 && cfg.inst.K > 0;
    int threads = cfg.train.num_threads > 0 ? cfg.train.num_threads
                                            : static_cast<int>(std::thread::hardware_concurrency());

    struct PairWork {
        Tensor k_plus;
        Tensor negatives;
        double l_cls = 0, l_reg = 0, l_ins = 0, total = 0;
        double cos_pos = 0, cos_neg = 0;
        bool has_neg = false;
        GradMap grads;
    };
    std::vector<PairWork> work(static_cast<size_t>(b));

    // Keys come from the memory encoder as it stands before this step's
    // momentum update. Per-pair sequencing: each pair's loss sees the bank
    // before its own key is enqueued, and after the earlier pairs' keys.
    if (use_inst) {
        if (frozen) {
            check_contract(frozen->k_plus.size() == static_cast<size_t>(b) &&
                               frozen->negatives.size() == static_cast<size_t>(b),
                           "eval_batch: frozen contrastive inputs size mismatch");
            for (int i = 0; i < b; ++i) {
                auto& pw = work[static_cast<size_t>(i)];
                pw.k_plus = frozen->k_plus[static_cast<size_t>(i)];
                pw.negatives = frozen->negatives[static_cast<size_t>(i)];
                pw.has_neg = pw.negatives.dim(0) > 0;
            }
        } else {
            parallel_for(b, threads, [&](int i) {
                work[static_cast<size_t>(i)].k_plus =
                    compute_k_plus(model, batch[static_cast<size_t>(i)]);
            });
            for (int i = 0; i < b; ++i) {
                auto& pw = work[static_cast<size_t>(i)];
                pw.negatives = model.bank.negatives(batch[static_cast<size_t>(i)].video_id);
                pw.has_neg = pw.negatives.dim(0) > 0;
                if (update_bank) model.bank.enqueue(pw.k_plus, batch[static_cast<size_t>(i)].video_id);
            }
        }
    }

    parallel_for(b, threads, [&](int i) {
        const TrainingPair& pair = batch[static_cast<size_t>(i)];
        PairWork& pw = work[static_cast<size_t>(i)];
        Graph g;
        BoundParams bp_enc(g, model.encoder.params(), want_grads);
        BoundParams bp_gen(g, model.filter_gen.params(), want_grads);
        BoundParams bp_reg(g, model.reg.params(), want_grads);
        std::optional<BoundParams> bp_psi, bp_aux;
        if (use_inst) {
            bp_psi.emplace(g, model.psi_main.params(), want_grads);
            if (model.psi_aux) bp_aux.emplace(g, model.psi_aux->params(), want_grads);
        }

        Var f_t = model.encoder.forward(g, bp_enc, g.constant(pair.template_img));
        Var f_s = model.encoder.forward(g, bp_enc, g.constant(pair.search_img));

        Var filt = model.filter_gen.predict_filter(g, bp_gen, f_t, pair.template_box, crop);
        Var score = score_map(g, f_s, filt);
        auto [label_cx, label_cy] = box_center_in_cells(pair.search_box, crop, cells);
        Tensor label = make_label_map(cells, cells, label_cx, label_cy, cfg.cls.sigma);
        Var l_cls = cls_loss(g, {{score, label}}, filt, cfg.cls.reg_factor);

        Rng reg_rng(pair_reg_seed(cfg.train.seed, step, i));
        Var l_reg = reg_loss(g, model.reg, bp_reg, f_s, to_boxparam(pair.search_box, crop), cfg.reg,
                             reg_rng);

        Var l_ins;
        if (use_inst) {
            Var q = l2_normalize(
                g, instance_embedding(g, model, *bp_psi, bp_aux ? &*bp_aux : nullptr, f_t,
                                      pair.template_box));
            l_ins = infonce_loss(g, q, pw.k_plus, pw.negatives, cfg.inst.tau);
            const Tensor& qv = g.val(q);
            pw.cos_pos = dot(qv, pw.k_plus);
            if (pw.has_neg) {
                double s = 0.0;
                int n = pw.negatives.dim(0);
                for (int r = 0; r < n; ++r) {
                    double d = 0.0;
                    for (int j = 0; j < pw.negatives.dim(1); ++j) d += qv[j] * pw.negatives.at(r, j);
                    s += d;
                }
                pw.cos_neg = s / n;
            }
        } else {
            l_ins = g.scalar_const(0.0);
        }

        Var total = add(g, add(g, scale(g, l_cls, w.cls / b), scale(g, l_reg, w.reg / b)),
                        scale(g, l_ins, w.ins / b));
        if (want_grads) g.backward(total);

        pw.l_cls = g.val(l_cls)[0];
        pw.l_reg = g.val(l_reg)[0];
        pw.l_ins = g.val(l_ins)[0];
        pw.total = g.val(total)[0];

        if (want_grads) {
            accumulate_grads(g, bp_enc, model.encoder.params(), "enc", pw.grads);
            accumulate_grads(g, bp_gen, model.filter_gen.params(), "gen", pw.grads);
            accumulate_grads(g, bp_reg, model.reg.params(), "reg", pw.grads);
            if (use_inst) {
                accumulate_grads(g, *bp_psi, model.psi_main.params(), "psi_main", pw.grads);
                if (model.psi_aux && bp_aux)
                    accumulate_grads(g, *bp_aux, model.psi_aux->params(), "psi_aux", pw.grads);
            }
        }
    });

    BatchEval out;
    StepMetrics& m = out.metrics;
    int neg_count = 0;
    for (int i = 0; i < b; ++i) {
        PairWork& pw = work[static_cast<size_t>(i)];
        if (!std::isfinite(pw.total))
            throw NumericError("train_step: non-finite loss at step " + std::to_string(step + 1) +
                               " pair " + std::to_string(i) + " (cls=" + std::to_string(pw.l_cls) +
                               " reg=" + std::to_string(pw.l_reg) + " ins=" + std::to_string(pw.l_ins) +
                               ")");
        m.l_cls += pw.l_cls / b;
        m.l_reg += pw.l_reg / b;
        m.l_ins += pw.l_ins / b;
        m.total += pw.total;
        m.cos_pos += pw.cos_pos / b;
        if (pw.has_neg) {
            m.cos_neg += pw.cos_neg;
            ++neg_count;
        }
        for (auto& [key, gradient] : pw.grads) {
            auto it = out.grads.find(key);
            if (it == out.grads.end())
                out.grads.emplace(key, std::move(gradient));
            else
                add_scaled(it->second, gradient, 1.0);
        }
    }
    if (neg_count > 0) m.cos_neg /= neg_count;
    if (use_inst) {
        for (int i = 0; i < b; ++i) {
            out.contrastive.k_plus.push_back(work[static_cast<size_t>(i)].k_plus);
            out.contrastive.negatives.push_back(work[static_cast<size_t>(i)].negatives);
        }
    }
    return out;
}

StepMetrics Trainer::train_step(const std::vector<TrainingPair>& batch) {
    double lr = model_.cfg.train.lr_at_step(step_);
    BatchEval eval = eval_batch(model_, batch, step_, /*update_bank=*/true, /*want_grads=*/true);
    last_grads_ = std::move(eval.grads);

    adam_.step(model_.trainable_groups(), last_grads_, lr);
    model_.omega.momentum_update(model_.encoder);
    ++step_;

    StepMetrics m = eval.metrics;
    m.lr = lr;
    m.step = step_;
    return m;
}

std::string metrics_to_json_line(const StepMetrics& m) {
    nlohmann::json j;
    j["step"] = m.step;
    j["L_cls"] = m.l_cls;
    j["L_reg"] = m.l_reg;
    j["L_ins"] = m.l_ins;
    j["total"] = m.total;
    j["lr"] = m.lr;
    j["cos_pos"] = m.cos_pos;
    j["cos_neg"] = m.cos_neg;
    return j.dump();
}

StepMetrics metrics_from_json_line(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("metrics line: ") + e.what());
    }
    StepMetrics m;
    m.step = j.at("step").get<int64_t>();
    m.l_cls = j.at("L_cls").get<double>();
    m.l_reg = j.at("L_reg").get<double>();
    m.l_ins = j.at("L_ins").get<double>();
    m.total = j.at("total").get<double>();
    m.lr = j.at("lr").get<double>();
    m.cos_pos = j.value("cos_pos", 0.0);
    m.cos_neg = j.value("cos_neg", 0.0);
    return m;
}

void Trainer::save_checkpoint(const std::string& path) const {
    Archive a;
    a.strings["format"] = "iat-checkpoint-v1";
    a.strings["config"] = config_to_json_text(model_.cfg);
    a.strings["config_hash"] = std::to_string(config_hash(model_.cfg));
    for (const auto& [prefix, ps] : model_.all_groups())
        for (const auto& name : ps->names()) a.arrays["param." + prefix + "." + name] = ps->get(name);
    std::map<std::string, Tensor> adam_state;
    adam_.export_state(adam_state);
    for (auto& [k, t] : adam_state) a.arrays[k] = t;
    a.arrays["adam.t"] = Tensor::scalar(static_cast<double>(adam_.t()));
    a.arrays["step"] = Tensor::scalar(static_cast<double>(step_));

    int n = static_cast<int>(model_.bank.size());
    int d = model_.bank.embed_dim();
    Tensor keys({n, d});
    Tensor tags({n});
    int row = 0;
    for (const auto& e : model_.bank.entries()) {
        for (int j = 0; j < d; ++j) keys.at(row, j) = e.key[j];
        tags[row] = static_cast<double>(e.tag);
        ++row;
    }
    a.arrays["bank.keys"] = keys;
    a.arrays["bank.tags"] = tags;
    a.save(path);
}

Trainer Trainer::load_checkpoint(const std::string& path, const FullConfig& cfg) {
    Archive a = Archive::load(path);
    auto hash_it = a.strings.find("config_hash");
    if (hash_it == a.strings.end()) throw ParseError("checkpoint: missing config hash");
    if (hash_it->second != std::to_string(config_hash(cfg)))
        throw ConfigError("checkpoint: config hash mismatch, refusing to load " + path);

    Model m = init_model(cfg);
    std::vector<std::pair<std::string, ParamSet*>> groups = m.trainable_groups();
    groups.emplace_back("omega", &m.omega.params());
    for (const auto& [prefix, ps] : groups) {
        for (const auto& name : ps->names()) {
            auto it = a.arrays.find("param." + prefix + "." + name);
            if (it == a.arrays.end()) throw ParseError("checkpoint: missing array " + prefix + "." + name);
            Tensor& dst = ps->get(name);
            check_contract(same_shape(dst, it->second), "checkpoint: shape mismatch for " + name);
            dst = it->second.clone();
        }
    }

    auto keys_it = a.arrays.find("bank.keys");
    auto tags_it = a.arrays.find("bank.tags");
    if (keys_it == a.arrays.end() || tags_it == a.arrays.end())
        throw ParseError("checkpoint: missing memory bank state");
    std::deque<MemoryBank::Entry> entries;
    const Tensor& keys = keys_it->second;
    const Tensor& tags = tags_it->second;
    for (int i = 0; i < keys.dim(0); ++i) {
        Tensor k({keys.dim(1)});
        for (int j = 0; j < keys.dim(1); ++j) k[j] = keys.at(i, j);
        entries.push_back({std::move(k), static_cast<int64_t>(tags[i])});
    }
    m.bank.restore(std::move(entries));

    Trainer t(std::move(m));
    auto step_it = a.arrays.find("step");
    if (step_it == a.arrays.end()) throw ParseError("checkpoint: missing step counter");
    t.step_ = static_cast<int64_t>(step_it->second[0]);

    std::map<std::string, Tensor> adam_state;
    for (const auto& [k, tensor] : a.arrays)
        if (k.rfind("adam.m.", 0) == 0 || k.rfind("adam.v.", 0) == 0) adam_state[k] = tensor;
    auto adam_t_it = a.arrays.find("adam.t");
    int64_t adam_t = adam_t_it != a.arrays.end() ? static_cast<int64_t>(adam_t_it->second[0]) : 0;
    t.adam_.import_state(adam_state, adam_t);
    return t;
}

FitResult fit(const FullConfig& cfg, const std::vector<VideoSample>& dataset, const std::string& out_dir,
              const std::string& resume_checkpoint) {
    cfg.validate();
    check_contract(!dataset.empty(), "fit: empty dataset");
    fs::create_directories(out_dir);
    save_config(cfg, (fs::path(out_dir) / "config.json").string());

    Trainer trainer = resume_checkpoint.empty() ? Trainer(init_model(cfg))
                                                : Trainer::load_checkpoint(resume_checkpoint, cfg);

    FitResult result;
    result.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    std::ofstream log(result.metrics_path,
                      resume_checkpoint.empty() ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("fit: cannot open metrics log " + result.metrics_path);

    int64_t total_steps = static_cast<int64_t>(cfg.train.epochs) * cfg.train.steps_per_epoch;
    while (trainer.step() < total_steps) {
        StepMetrics m;
        try {
            m = trainer.train_step_on(dataset);
        } catch (const NumericError&) {
            trainer.save_checkpoint(
                (fs::path(out_dir) / ("diagnostic_step" + std::to_string(trainer.step()) + ".ckpt"))
                    .string());
            throw;
        }
        log << metrics_to_json_line(m) << "\n";
        result.metrics.push_back(m);
        if (cfg.train.checkpoint_every > 0 && trainer.step() % cfg.train.checkpoint_every == 0) {
            trainer.save_checkpoint(
                (fs::path(out_dir) / ("checkpoint_" + std::to_string(trainer.step()) + ".ckpt")).string());
            log.flush();
        }
    }
    result.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
    trainer.save_checkpoint(result.final_checkpoint);
    return result;
}

}  // namespace iat
