#pragma once

namespace eitcool {

enum class Sideband { red, blue };

inline const char* sideband_name(Sideband s) { return s == Sideband::red ? "red" : "blue"; }

}  // namespace eitcool
