#pragma once

#include <ostream>
#include <span>
#include <string>

#include "fedprompt/common.hpp"

namespace fedprompt {

/// Minimal JSON emit helpers. Parsing goes through a JSON library; writing is
/// done by hand so every double is printed with %.17g and round-trips to the
/// identical bit pattern.
std::string json_escape(const std::string& s);
void write_double_array(std::ostream& os, std::span<const double> values);

}  // namespace fedprompt
