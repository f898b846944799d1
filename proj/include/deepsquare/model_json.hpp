#pragma once

#include <string>
#include <string_view>

#include "json.hpp"

#include "deepsquare/model_spec.hpp"

namespace deepsquare {

// Layer list with typed descriptors, e.g.
// {"builder": "vanilla_cnn", "variant": "ds3", "input": [32, 32, 3], "head": "softmax_ce",
//  "layers": [{"type": "conv", "in": 3, "out": 32, "kernel": 3, "stride": 2, "pad": 1}, ...]}
// Unknown keys and layer types are rejected.
nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& doc);

std::string model_spec_to_string(const ModelSpec& spec);
ModelSpec model_spec_from_string(std::string_view text);

// Rejects any key of `obj` not listed in `allowed`; `where` prefixes the message.
void require_known_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                        std::string_view where);

}  // namespace deepsquare
