#include "relbal/trainer.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <set>

#include <json.hpp>

#include "relbal/checkpoint.hpp"
#include "relbal/error.hpp"
#include "relbal/random.hpp"

namespace relbal {

namespace {

constexpr std::uint64_t kStreamNoise = 0x9015E;
constexpr std::uint64_t kStreamEpoch = 0xE90C;
constexpr std::size_t kEvalChunk = 64;
constexpr std::size_t kMaxWarnings = 20;

std::vector<std::pair<std::size_t, std::size_t>> chunks(std::size_t n, std::size_t minibatch) {
    const std::size_t count = minibatch == 0 ? 1 : std::max<std::size_t>(1, n / minibatch);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::size_t start = 0;
    for (std::size_t c = 0; c < count; ++c) {
        const std::size_t len = n / count + (c < n % count ? 1 : 0);
        out.emplace_back(start, len);
        start += len;
    }
    return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void append_rows(Tensor& dst, std::size_t at, const Tensor& src) {
    const auto n = src.cols();
    for (std::size_t r = 0; r < src.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) dst.at(at + r, c) = src.at(r, c);
}

}  // namespace

Dataset load_or_generate(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) {
        Dataset ds = load_dataset(cfg.data_dir);
        if (ds.spec.n_classes != cfg.data.n_classes || ds.spec.image_channels != cfg.data.image_channels ||
            ds.spec.landmark_channels != cfg.data.landmark_channels || ds.spec.source_size != cfg.data.source_size)
            throw ConfigError("dataset in " + cfg.data_dir + " does not match the data.* geometry of the config");
        return ds;
    }
    return generate_dataset(cfg.dataset_spec());
}

std::string run_record_json(const RunRecord& r, bool include_timing) {
    nlohmann::ordered_json j;
    j["config_hash"] = r.config_hash;
    j["code_version"] = r.code_version;
    j["seed"] = r.seed;
    nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
    for (const auto& e : r.epochs) {
        nlohmann::ordered_json row;
        row["epoch"] = e.epoch;
        row["learning_rate"] = e.learning_rate;
        row["total"] = e.total;
        row["cls"] = e.cls;
        row["anchor"] = e.anchor;
        row["center"] = e.center;
        row["steps"] = e.steps;
        epochs.push_back(row);
    }
    j["epochs"] = epochs;
    j["eval"] = nlohmann::ordered_json::parse(eval_report_json(r.eval));
    if (include_timing) j["wall_clock_seconds"] = r.wall_clock_seconds;
    j["warnings"] = r.warnings;
    return j.dump(2) + "\n";
}

TrainResult train(const ExperimentConfig& cfg, const TrainOptions& options) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    const Dataset ds = load_or_generate(cfg);
    const auto N = cfg.data.n_classes;
    const auto true_labels = ds.labels();
    const auto groups = ds.groups();
    auto noise_rng = make_rng(cfg.seed, {kStreamNoise});
    const auto noisy = inject_noise(true_labels, N, cfg.noise_rate, noise_rng);

    Model model(cfg);
    model.init(cfg.seed);
    AdamState state = make_adam_state(model.params(), cfg.optim);
    const bool anchors = cfg.rb.anchors_active();

    RunRecord rec;
    rec.config_hash = config_hash(cfg);
    rec.seed = cfg.seed;
    std::set<std::string> seen_warnings;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto rng = make_rng(cfg.seed, {kStreamEpoch, epoch});
        std::vector<std::string> warnings;
        const auto batch = refine_batch(noisy.labels, groups, N, cfg.refine, rng, &warnings);
        for (auto& w : warnings)
            if (seen_warnings.insert(w).second && rec.warnings.size() < kMaxWarnings) rec.warnings.push_back(w);

        std::vector<FusionEncoder::Input> inputs;
        std::vector<std::size_t> batch_labels;
        inputs.reserve(batch.size());
        for (auto idx : batch) {
            const auto& s = ds.samples[idx];
            inputs.push_back(model.prepare(cfg.augment_enabled ? augment(s, cfg.augment, rng)
                                                               : center_crop(s, cfg.augment.crop)));
            batch_labels.push_back(noisy.labels[idx]);
        }
        const Tensor targets = smooth_labels(one_hot(batch_labels, N), cfg.smoothing_term);

        EpochLog log;
        log.epoch = epoch;
        log.learning_rate = state.learning_rate();
        std::size_t step = 0;
        for (const auto& [start, len] : chunks(batch.size(), cfg.minibatch)) {
            const auto where = [&] { return " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step); };
            Tape tape;
            auto bound = model.bind(tape);
            Var cls, anchor_term, center_term, total;
            // Kernels reject non-finite inputs as invalid arguments; inside a
            // step with a validated config that only happens on divergence.
            try {
                const auto f = model.forward(bound, std::span(inputs).subspan(start, len), rng, true);
                Tensor chunk_targets({len, N});
                for (std::size_t r = 0; r < len; ++r)
                    for (std::size_t c = 0; c < N; ++c) chunk_targets.at(r, c) = targets.at(start + r, c);
                const std::span<const std::size_t> chunk_labels(batch_labels.data() + start, len);
                cls = ops::class_distribution_loss(f.rel.l_final, chunk_targets);
                if (anchors) {
                    anchor_term = ops::anchor_loss(bound.anchors);
                    center_term = ops::center_loss(f.e, chunk_labels, bound.anchors, cfg.rb.k);
                }
                total = ops::total_loss(cls, anchor_term, center_term, cfg.loss);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + where());
            } catch (const InvalidArgument& e) {
                throw NumericError(std::string(e.what()) + where());
            }
            if (!std::isfinite(total.value()[0])) throw NumericError("non-finite total loss" + where());
            const auto grads = tape.backward(total);
            adam_step(model.params(), grads, state);

            log.total += total.value()[0];
            log.cls += cls.value()[0];
            if (anchors) {
                log.anchor += anchor_term.value()[0];
                log.center += center_term.value()[0];
            }
            ++step;
        }
        log.steps = step;
        const double inv = 1.0 / static_cast<double>(step);
        log.total *= inv;
        log.cls *= inv;
        log.anchor *= inv;
        log.center *= inv;
        rec.epochs.push_back(log);
        if (options.log)
            *options.log << "epoch " << epoch << " lr " << log.learning_rate << " loss " << log.total << " (cls "
                         << log.cls << ", anchor " << log.anchor << ", center " << log.center << ")\n";
        state.epoch = epoch + 1;
    }

    if (cfg.head.recalibrate_bn) {
        std::vector<FusionEncoder::Input> all;
        all.reserve(ds.size());
        for (const auto& s : ds.samples) all.push_back(model.prepare(center_crop(s, cfg.augment.crop)));
        model.recalibrate_head(model.embed(all));
    }
    rec.eval = evaluate(cfg, model.params());
    rec.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (options.write_outputs) {
        const std::filesystem::path dir = cfg.output_dir;
        ensure_dir(dir);
        save_checkpoint(dir / "checkpoint.rbck", model.params());
        write_text(dir / "run_record.json", run_record_json(rec));
        write_text(dir / "eval_report.json", eval_report_json(rec.eval));
        write_text(dir / "confusion.csv", confusion_csv(rec.eval.confusion));
    }
    return {std::move(model.params()), std::move(rec)};
}

EvalDetail evaluate_detail(const ExperimentConfig& cfg, const ParameterSet& params) {
    cfg.validate();
    Model model(cfg);
    model.load(params);
    const Dataset base = cfg.data_dir.empty() ? Dataset{} : load_dataset(cfg.data_dir);
    const DatasetSpec spec = cfg.data_dir.empty() ? cfg.dataset_spec() : base.spec;
    const Dataset test = generate_test_split(spec, cfg.test_per_class);
    const auto n = test.size(), N = cfg.data.n_classes;

    EvalDetail d;
    d.embeddings = Tensor({n, cfg.encoder.embed_dim});
    d.primary = Tensor({n, N});
    d.corrected = Tensor({n, N});
    d.labels = test.labels();
    std::mt19937_64 unused(0);
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
        const auto len = std::min(kEvalChunk, n - start);
        std::vector<FusionEncoder::Input> inputs;
        for (std::size_t i = start; i < start + len; ++i)
            inputs.push_back(model.prepare(center_crop(test.samples[i], cfg.augment.crop)));
        Tape tape;
        auto bound = model.bind(tape);
        const auto f = model.forward(bound, inputs, unused, false);
        append_rows(d.embeddings, start, f.e.value());
        append_rows(d.primary, start, f.rel.l.value());
        append_rows(d.corrected, start, f.rel.l_final.value());
    }
    for (std::size_t i = 0; i < n; ++i) d.preds.push_back(predict(d.corrected.row(i)));

    auto& r = d.report;
    r.n_samples = n;
    r.n_classes = N;
    r.accuracy = accuracy(d.preds, d.labels);
    r.macro_f1 = macro_f1(d.preds, d.labels, N);
    r.confusion = confusion_matrix(d.preds, d.labels, N);
    std::string diag;
    try {
        r.db_score = davies_bouldin(d.embeddings, d.labels);
    } catch (const NumericError& e) {
        r.db_score = std::nan("");
        diag += e.what();
    }
    std::string ch_diag;
    r.ch_score = calinski_harabasz(d.embeddings, d.labels, &ch_diag);
    if (!ch_diag.empty()) diag += (diag.empty() ? "" : "; ") + ch_diag;
    r.diagnostics = diag;
    std::tie(r.primary_std, r.corrected_std) = distribution_spread(d.primary, d.corrected);
    return d;
}

EvalReport evaluate(const ExperimentConfig& cfg, const ParameterSet& params) {
    return evaluate_detail(cfg, params).report;
}

EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint) {
    const ParameterSet params = load_checkpoint(checkpoint);
    const EvalReport r = evaluate(cfg, params);
    const std::filesystem::path dir = cfg.output_dir;
    ensure_dir(dir);
    write_text(dir / "eval_report.json", eval_report_json(r));
    write_text(dir / "confusion.csv", confusion_csv(r.confusion));
    return r;
}

}  // namespace relbal
