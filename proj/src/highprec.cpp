#include "diqre/highprec.hpp"

#include <sstream>

#include "diqre/errors.hpp"

namespace diqre {

HighPrec parse_decimal(const std::string& text) {
    try {
        return HighPrec(text);
    } catch (const std::exception&) {
        throw ParameterError("not a decimal number: '" + text + "'");
    }
}

std::string format_decimal(const HighPrec& value, int digits) {
    std::ostringstream os;
    os.precision(digits);
    os << value;
    return os.str();
}

}  // namespace diqre
