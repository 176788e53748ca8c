#pragma once

#include <json.hpp>

namespace invdes {

// Metrics can legitimately be +infinity (divergence sentinel); JSON has no
// literal for it, so it is serialized as the string "inf".
nlohmann::json metric_to_json(double v);
double metric_from_json(const nlohmann::json& j);

}  // namespace invdes
