#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <string>

namespace cdw {

// All measure arithmetic is exact; comparisons drive constructive searches,
// so no floating point is used anywhere in the library.
using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// Serialized as "p/q" ("p" when q == 1), the form used in JSON reports.
std::string rational_to_string(const Rational& r);
Rational rational_from_string(const std::string& s);

}  // namespace cdw
