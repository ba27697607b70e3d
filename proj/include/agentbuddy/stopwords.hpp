#pragma once

#include <string_view>

namespace agentbuddy {

// Fixed 50-word English function-word list. Function words split candidate
// sets arbitrarily, so they never become clarifying filters.
bool is_stopword(std::string_view token);

}  // namespace agentbuddy
