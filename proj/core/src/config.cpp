#include "fedprompt/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedprompt/jsonio.hpp"

namespace fedprompt {

namespace {

using nlohmann::json;

std::size_t get_size(const json& v, const std::string& key) {
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0)) {
        throw ConfigError("config field '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

double get_double(const json& v, const std::string& key) {
    if (!v.is_number()) {
        throw ConfigError("config field '" + key + "' must be a number");
    }
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& key) {
    if (!v.is_boolean()) {
        throw ConfigError("config field '" + key + "' must be a boolean");
    }
    return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
    if (!v.is_string()) {
        throw ConfigError("config field '" + key + "' must be a string");
    }
    return v.get<std::string>();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ConfigError("config root must be a JSON object");
    }
    ExperimentConfig cfg;
    for (const auto& [key, value] : j.items()) {
        if (key == "seed") {
            if (!value.is_number_integer()) {
                throw ConfigError("config field 'seed' must be an integer");
            }
            cfg.seed = value.get<std::uint64_t>();
        } else if (key == "embed_dim") {
            cfg.embed_dim = get_size(value, key);
        } else if (key == "hidden_dim") {
            cfg.hidden_dim = get_size(value, key);
        } else if (key == "feature_dim") {
            cfg.feature_dim = get_size(value, key);
        } else if (key == "prompt_len") {
            cfg.prompt_len = get_size(value, key);
        } else if (key == "tau") {
            cfg.tau = get_double(value, key);
        } else if (key == "num_domains") {
            cfg.num_domains = get_size(value, key);
        } else if (key == "num_classes") {
            cfg.num_classes = get_size(value, key);
        } else if (key == "shift_strength") {
            cfg.shift_strength = get_double(value, key);
        } else if (key == "noise_sigma") {
            cfg.noise_sigma = get_double(value, key);
        } else if (key == "samples_per_domain_class") {
            cfg.samples_per_domain_class = get_size(value, key);
        } else if (key == "num_clients") {
            cfg.num_clients = get_size(value, key);
        } else if (key == "clients_per_round") {
            cfg.clients_per_round = get_size(value, key);
        } else if (key == "rounds") {
            cfg.rounds = get_size(value, key);
        } else if (key == "local_iters") {
            cfg.local_iters = get_size(value, key);
        } else if (key == "batch_size") {
            cfg.batch_size = get_size(value, key);
        } else if (key == "lambda") {
            cfg.lambda = get_double(value, key);
        } else if (key == "momentum_beta") {
            cfg.momentum_beta = get_double(value, key);
        } else if (key == "learning_rate") {
            cfg.learning_rate = get_double(value, key);
        } else if (key == "tau_cont") {
            cfg.tau_cont = get_double(value, key);
        } else if (key == "partition_mode") {
            cfg.partition_mode = get_string(value, key);
        } else if (key == "target_domain") {
            if (value.is_string()) {
                if (value.get<std::string>() != "sweep") {
                    throw ConfigError("config field 'target_domain' must be an integer or \"sweep\"");
                }
                cfg.target_domain.reset();
            } else {
                cfg.target_domain = get_size(value, key);
            }
        } else if (key == "no_g_prompt") {
            cfg.no_g_prompt = get_bool(value, key);
        } else if (key == "no_d_prompts") {
            cfg.no_d_prompts = get_bool(value, key);
        } else if (key == "no_contrastive") {
            cfg.no_contrastive = get_bool(value, key);
        } else if (key == "static_query") {
            cfg.static_query = get_bool(value, key);
        } else if (key == "no_ensemble") {
            cfg.no_ensemble = get_bool(value, key);
        } else if (key == "no_kl") {
            cfg.no_kl = get_bool(value, key);
        } else if (key == "no_mse") {
            cfg.no_mse = get_bool(value, key);
        } else if (key == "use_domain_labels") {
            cfg.use_domain_labels = get_bool(value, key);
        } else if (key == "qprompt_mse_all_classes") {
            cfg.qprompt_mse_all_classes = get_bool(value, key);
        } else if (key == "broadcast_momentum_dprompts") {
            cfg.broadcast_momentum_dprompts = get_bool(value, key);
        } else {
            throw ConfigError("unknown config field '" + key + "'");
        }
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

void validate(const ExperimentConfig& cfg) {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    require(cfg.embed_dim >= 2, "embed_dim must be at least 2");
    require(cfg.hidden_dim >= 1, "hidden_dim must be at least 1");
    require(cfg.feature_dim >= 2, "feature_dim must be at least 2");
    require(cfg.prompt_len >= 1, "prompt_len must be at least 1");
    require(cfg.tau > 0.0, "tau must be positive");
    require(cfg.num_domains >= 2, "num_domains must be at least 2");
    require(cfg.num_classes >= 2, "num_classes must be at least 2");
    require(cfg.shift_strength >= 0.0, "shift_strength must be non-negative");
    require(cfg.noise_sigma > 0.0, "noise_sigma must be positive");
    require(cfg.samples_per_domain_class >= 2,
            "samples_per_domain_class must be at least 2 for an 80/20 split");
    require(cfg.num_clients >= 1, "num_clients must be at least 1");
    require(cfg.clients_per_round >= 1 && cfg.clients_per_round <= cfg.num_clients,
            "clients_per_round must lie in 1..num_clients");
    require(cfg.batch_size >= 1, "batch_size must be at least 1");
    require(cfg.lambda >= 0.0, "lambda must be non-negative");
    require(cfg.momentum_beta > 0.0, "momentum_beta must be positive");
    require(cfg.learning_rate > 0.0, "learning_rate must be positive");
    require(cfg.tau_cont > 0.0, "tau_cont must be positive");
    require(cfg.partition_mode == "one_domain_iid" || cfg.partition_mode == "mixed",
            "partition_mode must be \"one_domain_iid\" or \"mixed\"");
    if (cfg.partition_mode == "one_domain_iid") {
        require(cfg.num_clients >= cfg.num_domains - 1,
                "one_domain_iid needs num_clients >= number of source domains");
    }
    if (cfg.target_domain.has_value()) {
        require(*cfg.target_domain < cfg.num_domains, "target_domain out of range");
    }
}

std::string serialize_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    auto b = [](bool v) { return v ? "true" : "false"; };
    os << "{\n";
    os << "  \"seed\": " << cfg.seed << ",\n";
    os << "  \"embed_dim\": " << cfg.embed_dim << ",\n";
    os << "  \"hidden_dim\": " << cfg.hidden_dim << ",\n";
    os << "  \"feature_dim\": " << cfg.feature_dim << ",\n";
    os << "  \"prompt_len\": " << cfg.prompt_len << ",\n";
    os << "  \"tau\": " << format_double(cfg.tau) << ",\n";
    os << "  \"num_domains\": " << cfg.num_domains << ",\n";
    os << "  \"num_classes\": " << cfg.num_classes << ",\n";
    os << "  \"shift_strength\": " << format_double(cfg.shift_strength) << ",\n";
    os << "  \"noise_sigma\": " << format_double(cfg.noise_sigma) << ",\n";
    os << "  \"samples_per_domain_class\": " << cfg.samples_per_domain_class << ",\n";
    os << "  \"num_clients\": " << cfg.num_clients << ",\n";
    os << "  \"clients_per_round\": " << cfg.clients_per_round << ",\n";
    os << "  \"rounds\": " << cfg.rounds << ",\n";
    os << "  \"local_iters\": " << cfg.local_iters << ",\n";
    os << "  \"batch_size\": " << cfg.batch_size << ",\n";
    os << "  \"lambda\": " << format_double(cfg.lambda) << ",\n";
    os << "  \"momentum_beta\": " << format_double(cfg.momentum_beta) << ",\n";
    os << "  \"learning_rate\": " << format_double(cfg.learning_rate) << ",\n";
    os << "  \"tau_cont\": " << format_double(cfg.tau_cont) << ",\n";
    os << "  \"partition_mode\": \"" << json_escape(cfg.partition_mode) << "\",\n";
    os << "  \"target_domain\": ";
    if (cfg.target_domain.has_value()) {
        os << *cfg.target_domain;
    } else {
        os << "\"sweep\"";
    }
    os << ",\n";
    os << "  \"no_g_prompt\": " << b(cfg.no_g_prompt) << ",\n";
    os << "  \"no_d_prompts\": " << b(cfg.no_d_prompts) << ",\n";
    os << "  \"no_contrastive\": " << b(cfg.no_contrastive) << ",\n";
    os << "  \"static_query\": " << b(cfg.static_query) << ",\n";
    os << "  \"no_ensemble\": " << b(cfg.no_ensemble) << ",\n";
    os << "  \"no_kl\": " << b(cfg.no_kl) << ",\n";
    os << "  \"no_mse\": " << b(cfg.no_mse) << ",\n";
    os << "  \"use_domain_labels\": " << b(cfg.use_domain_labels) << ",\n";
    os << "  \"qprompt_mse_all_classes\": " << b(cfg.qprompt_mse_all_classes) << ",\n";
    os << "  \"broadcast_momentum_dprompts\": " << b(cfg.broadcast_momentum_dprompts) << "\n";
    os << "}\n";
    return os.str();
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_config: cannot open " + path.string());
    }
    out << serialize_config(cfg);
}

DataConfig data_config(const ExperimentConfig& cfg) {
    DataConfig d;
    d.num_domains_total = cfg.num_domains;
    d.num_classes = cfg.num_classes;
    d.feature_dim = cfg.feature_dim;
    d.samples_per_domain_class = cfg.samples_per_domain_class;
    d.shift_strength = cfg.shift_strength;
    d.noise_sigma = cfg.noise_sigma;
    return d;
}

FederationConfig federation_config(const ExperimentConfig& cfg) {
    FederationConfig f;
    f.num_clients = cfg.num_clients;
    f.clients_per_round = cfg.clients_per_round;
    f.rounds = cfg.rounds;
    f.local_iters = cfg.local_iters;
    f.batch_size = cfg.batch_size;
    f.lambda = cfg.lambda;
    f.momentum_beta = cfg.momentum_beta;
    f.learning_rate = cfg.learning_rate;
    f.tau_cont = cfg.tau_cont;
    f.no_g_prompt = cfg.no_g_prompt;
    f.no_d_prompts = cfg.no_d_prompts;
    f.no_contrastive = cfg.no_contrastive;
    f.static_query = cfg.static_query;
    f.no_kl = cfg.no_kl;
    f.no_mse = cfg.no_mse;
    f.use_domain_labels = cfg.use_domain_labels;
    f.qprompt_mse_all_classes = cfg.qprompt_mse_all_classes;
    f.broadcast_momentum_dprompts = cfg.broadcast_momentum_dprompts;
    return f;
}

PartitionMode partition_mode_of(const ExperimentConfig& cfg) {
    return cfg.partition_mode == "mixed" ? PartitionMode::mixed : PartitionMode::one_domain_iid;
}

}  // namespace fedprompt
