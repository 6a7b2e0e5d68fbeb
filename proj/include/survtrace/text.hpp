#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace survtrace::text {

// Shortest round-trippable decimal ("%.17g" trimmed to what is needed).
std::string format_number(double value);

// Strict parse: the whole (trimmed) field must be a finite number.
std::optional<double> parse_number(std::string_view field);

// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);

std::string trim(std::string_view s);

// "0.25,0.5,0.75" -> {0.25, 0.5, 0.75}; throws ContractError on junk.
std::vector<double> parse_number_list(std::string_view list);
std::vector<std::string> split_list(std::string_view list, char sep = ',');

}  // namespace survtrace::text
