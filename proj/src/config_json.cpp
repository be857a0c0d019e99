#include "config_json.hpp"

#include <type_traits>

namespace specgen::detail {

nlohmann::json model_config_json(const models::ModelConfig& c) {
  return nlohmann::json{{"n_max", c.n_max},
                        {"k", c.k},
                        {"noise_width", c.noise_width},
                        {"noise_layers", c.noise_layers},
                        {"bank_size", c.bank_size},
                        {"rotation_layers", c.rotation_layers},
                        {"set_hidden", c.set_hidden},
                        {"head_hidden", c.head_hidden},
                        {"gen_ppgn_width", c.gen_ppgn_width},
                        {"gen_ppgn_layers", c.gen_ppgn_layers},
                        {"disc_ppgn_width", c.disc_ppgn_width},
                        {"disc_ppgn_layers", c.disc_ppgn_layers},
                        {"dropout", c.dropout},
                        {"gumbel_tau", c.gumbel_tau}};
}

models::ModelConfig model_config_from(const nlohmann::json& j, bool partial) {
  models::ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (partial && !j.contains(key)) return;
    field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("n_max", c.n_max);
  get("k", c.k);
  get("noise_width", c.noise_width);
  get("noise_layers", c.noise_layers);
  get("bank_size", c.bank_size);
  get("rotation_layers", c.rotation_layers);
  get("set_hidden", c.set_hidden);
  get("head_hidden", c.head_hidden);
  get("gen_ppgn_width", c.gen_ppgn_width);
  get("gen_ppgn_layers", c.gen_ppgn_layers);
  get("disc_ppgn_width", c.disc_ppgn_width);
  get("disc_ppgn_layers", c.disc_ppgn_layers);
  get("dropout", c.dropout);
  get("gumbel_tau", c.gumbel_tau);
  return c;
}

}  // namespace specgen::detail
