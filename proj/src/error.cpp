#include "exgrpo/error.hpp"

namespace exgrpo {

int exit_code_for(const std::exception& e) noexcept {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const IoError*>(&e)) return 3;
    if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const SchemaError*>(&e)) return 4;
    if (dynamic_cast<const OracleError*>(&e)) return 5;
    if (dynamic_cast<const NumericError*>(&e)) return 6;
    if (dynamic_cast<const ContractError*>(&e) || dynamic_cast<const InvariantError*>(&e)) return 7;
    return 1;
}

}  // namespace exgrpo
