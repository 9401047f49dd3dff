#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sucode {

/// Runs `sucode <verb> [flags]`. args excludes the program name.
/// Returns 0 on success, 1 on a domain error (printed as `<ErrorName>: msg`
/// on `err`), 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sucode
