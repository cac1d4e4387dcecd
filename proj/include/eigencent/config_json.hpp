// JSON (de)serialization of the training configuration, checkpoint metadata
// assembly, and model reconstruction from a loaded checkpoint. Config keys
// are the snake_cased hyper-parameter names used throughout.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "eigencent/checkpoint.hpp"
#include "eigencent/data.hpp"
#include "eigencent/train.hpp"

namespace eigencent {

inline AggregatorKind aggregator_from_name(const std::string& name) {
    if (name == "eigen") return AggregatorKind::eigen;
    if (name == "self_attn") return AggregatorKind::self_attn;
    if (name == "max") return AggregatorKind::max;
    if (name == "avg") return AggregatorKind::avg;
    throw ContractViolation("unknown aggregator: " + name);
}

inline TaskKind task_from_name(const std::string& name) {
    if (name == "sentence") return TaskKind::sentence;
    if (name == "document") return TaskKind::document;
    if (name == "pair") return TaskKind::pair;
    if (name == "synthetic") return TaskKind::synthetic;
    throw ContractViolation("unknown task: " + name);
}

inline const char* fusion_name(FusionKind k) {
    return k == FusionKind::identity_projection ? "identity_projection" : "bidirectional_elman";
}

inline FusionKind fusion_from_name(const std::string& name) {
    if (name == "identity_projection") return FusionKind::identity_projection;
    if (name == "bidirectional_elman") return FusionKind::bidirectional_elman;
    throw ContractViolation("unknown fusion kind: " + name);
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["embedding_size"] = c.embedding_size;
    j["lstm_hidden_unit"] = c.lstm_hidden_unit;
    j["connectivity_hidden_units"] = c.connectivity_hidden_units;
    j["regularization_rate"] = c.regularization_rate;
    j["initial_learning_rate"] = c.initial_learning_rate;
    j["learning_rate_decay"] = c.learning_rate_decay;
    j["learning_rate_decay_steps"] = c.learning_rate_decay_steps;
    j["initial_batch_size"] = c.initial_batch_size;
    j["batch_size_low_bound"] = c.batch_size_low_bound;
    j["dropout_rate"] = c.dropout_rate;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_epsilon"] = c.adam_epsilon;
    j["grad_clip_norm"] = c.grad_clip_norm;
    j["epochs"] = c.epochs;
    j["seed"] = c.seed;
    j["batch_token_budget"] = c.batch_token_budget;
    j["vocab_min_freq"] = c.vocab_min_freq;
    j["aggregator"] = aggregator_name(c.aggregator);
    j["fusion"] = fusion_name(c.fusion);
    j["head_hidden"] = c.head_hidden;
    j["power_epsilon"] = c.power.epsilon;
    j["power_max_steps"] = c.power.max_converge_steps;
    j["power_grad_steps"] = c.power.grad_steps;
    return j;
}

/// Reads any subset of the config keys over the given defaults; unknown keys
/// are rejected so typos in config files surface immediately.
inline TrainConfig train_config_from_json(const nlohmann::json& j,
                                          TrainConfig c = TrainConfig{}) {
    static const std::vector<std::string> known = {
        "embedding_size", "lstm_hidden_unit", "connectivity_hidden_units",
        "regularization_rate", "initial_learning_rate", "learning_rate_decay",
        "learning_rate_decay_steps", "initial_batch_size", "batch_size_low_bound",
        "dropout_rate", "adam_beta1", "adam_beta2", "adam_epsilon", "grad_clip_norm",
        "epochs", "seed", "batch_token_budget", "vocab_min_freq", "aggregator", "fusion",
        "head_hidden", "power_epsilon", "power_max_steps", "power_grad_steps",
        // task / data keys handled by the caller
        "task", "train_path", "dev_path", "test_path", "embeddings_path",
        "synthetic_classes", "synthetic_vocab", "synthetic_distractor_rate",
        "synthetic_len_lo", "synthetic_len_hi", "synthetic_train", "synthetic_dev",
        "synthetic_test"};
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& k : known) ok = ok || k == key;
        require(ok, "config: unknown key '" + key + "'");
    }
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("embedding_size", c.embedding_size);
    get("lstm_hidden_unit", c.lstm_hidden_unit);
    get("connectivity_hidden_units", c.connectivity_hidden_units);
    get("regularization_rate", c.regularization_rate);
    get("initial_learning_rate", c.initial_learning_rate);
    get("learning_rate_decay", c.learning_rate_decay);
    get("learning_rate_decay_steps", c.learning_rate_decay_steps);
    get("initial_batch_size", c.initial_batch_size);
    get("batch_size_low_bound", c.batch_size_low_bound);
    get("dropout_rate", c.dropout_rate);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_epsilon", c.adam_epsilon);
    get("grad_clip_norm", c.grad_clip_norm);
    get("epochs", c.epochs);
    get("seed", c.seed);
    get("batch_token_budget", c.batch_token_budget);
    get("vocab_min_freq", c.vocab_min_freq);
    get("head_hidden", c.head_hidden);
    get("power_epsilon", c.power.epsilon);
    get("power_max_steps", c.power.max_converge_steps);
    get("power_grad_steps", c.power.grad_steps);
    if (j.contains("aggregator"))
        c.aggregator = aggregator_from_name(j.at("aggregator").get<std::string>());
    if (j.contains("fusion")) c.fusion = fusion_from_name(j.at("fusion").get<std::string>());
    return c;
}

inline nlohmann::json make_checkpoint_meta(const TrainConfig& cfg, TaskKind task,
                                           const Vocab& vocab, std::size_t n_classes,
                                           const TrainState& state) {
    nlohmann::json meta;
    meta["config"] = train_config_to_json(cfg);
    meta["task"] = task_name(task);
    meta["n_classes"] = n_classes;
    meta["vocab"] = vocab.tokens;
    meta["step"] = state.step;
    meta["epoch"] = state.epoch;
    meta["rng_state"] = state.rng_state;
    return meta;
}

/// A model plus its optimizer state rebuilt from checkpoint metadata. Model
/// and grads live on the heap so the ParamStore's pointers survive moves of
/// the bundle.
struct RestoredModel {
    TrainConfig cfg;
    TaskKind task{TaskKind::sentence};
    Vocab vocab;
    std::size_t n_classes{0};
    TrainState state;
    std::unique_ptr<Model> model;
    std::unique_ptr<ModelGrads> grads;
    ParamStore ps;
};

inline RestoredModel restore_model(const LoadedCheckpoint& loaded) {
    RestoredModel r;
    r.cfg = train_config_from_json(loaded.meta.at("config"));
    r.task = task_from_name(loaded.meta.at("task").get<std::string>());
    r.n_classes = loaded.meta.at("n_classes").get<std::size_t>();
    r.vocab = Vocab::base();
    const auto tokens = loaded.meta.at("vocab").get<std::vector<std::string>>();
    require(tokens.size() >= 2 && tokens[0] == "<pad>" && tokens[1] == "<unk>",
            "checkpoint: malformed vocabulary");
    for (std::size_t i = 2; i < tokens.size(); ++i) r.vocab.add(tokens[i]);
    r.state.step = loaded.meta.at("step").get<std::size_t>();
    r.state.epoch = loaded.meta.at("epoch").get<std::size_t>();
    const auto rngs = loaded.meta.at("rng_state").get<std::vector<std::uint64_t>>();
    require(rngs.size() == 4, "checkpoint: malformed rng state");
    for (std::size_t i = 0; i < 4; ++i) r.state.rng_state[i] = rngs[i];

    Rng rng(r.cfg.seed);
    r.model = std::make_unique<Model>(
        Model::init(r.cfg.model_config(r.task, r.vocab.size(), r.n_classes), rng));
    r.grads = std::make_unique<ModelGrads>(ModelGrads::zeros_like(*r.model));
    r.ps = build_param_store(*r.model, *r.grads);
    loaded.apply_to(r.ps);
    return r;
}

}  // namespace eigencent
