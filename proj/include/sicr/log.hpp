#pragma once

#include <functional>
#include <string>

namespace sicr {

using WarningSink = std::function<void(const std::string&)>;

// Non-fatal diagnostics (degenerate models, regularized covariances). The
// default sink prints "warning: <message>" to stderr.
void warn(const std::string& message);

// Installs `sink` and returns the previous one. An empty sink restores the
// default.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace sicr
