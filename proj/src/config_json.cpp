#include "vicon/config_json.hpp"

#include "vicon/train.hpp"

namespace vicon {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["d"] = cfg.d;
    j["n_layers"] = cfg.n_layers;
    j["n_heads"] = cfg.n_heads;
    j["d_ffn"] = cfg.d_ffn;
    j["max_pairs"] = cfg.max_pairs;
    j["min_context"] = cfg.min_context;
    j["rx"] = cfg.rx;
    j["ry"] = cfg.ry;
    j["nc"] = cfg.nc;
    j["nq"] = cfg.nq;
    j["c_union"] = cfg.c_union;
    j["dropout"] = cfg.dropout;
    j["ln_eps"] = cfg.ln_eps;
    return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.d = j.at("d").get<int64_t>();
    cfg.n_layers = j.at("n_layers").get<int64_t>();
    cfg.n_heads = j.at("n_heads").get<int64_t>();
    cfg.d_ffn = j.at("d_ffn").get<int64_t>();
    cfg.max_pairs = j.at("max_pairs").get<int64_t>();
    cfg.min_context = j.at("min_context").get<int64_t>();
    cfg.rx = j.at("rx").get<int64_t>();
    cfg.ry = j.at("ry").get<int64_t>();
    cfg.nc = j.at("nc").get<int64_t>();
    cfg.nq = j.at("nq").get<int64_t>();
    cfg.c_union = j.at("c_union").get<int64_t>();
    cfg.dropout = j.value("dropout", 0.0);
    cfg.ln_eps = j.value("ln_eps", 1e-5);
    return cfg;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["peak_lr"] = cfg.peak_lr;
    j["final_lr"] = cfg.final_lr;
    j["warmup_steps"] = cfg.warmup_steps;
    j["total_steps"] = cfg.total_steps;
    j["weight_decay"] = cfg.weight_decay;
    j["clip_norm"] = cfg.clip_norm;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["s_max"] = cfg.s_max;
    j["prompts_per_traj"] = cfg.prompts_per_traj;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["eps"] = cfg.eps;
    j["n_threads"] = cfg.n_threads;
    j["log_every"] = cfg.log_every;
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    cfg.peak_lr = j.at("peak_lr").get<double>();
    cfg.final_lr = j.at("final_lr").get<double>();
    cfg.warmup_steps = j.at("warmup_steps").get<int64_t>();
    cfg.total_steps = j.at("total_steps").get<int64_t>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.clip_norm = j.at("clip_norm").get<double>();
    cfg.batch_size = j.at("batch_size").get<int64_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.s_max = j.value("s_max", int64_t{3});
    cfg.prompts_per_traj = j.value("prompts_per_traj", int64_t{4});
    cfg.beta1 = j.value("beta1", 0.9);
    cfg.beta2 = j.value("beta2", 0.999);
    cfg.eps = j.value("eps", 1e-8);
    cfg.n_threads = j.value("n_threads", int64_t{0});
    cfg.log_every = j.value("log_every", int64_t{50});
    return cfg;
}

}  // namespace vicon
