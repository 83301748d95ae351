#include "sicr/log.hpp"

#include <iostream>
#include <utility>

namespace sicr {

namespace {

WarningSink& current_sink() {
  static WarningSink sink;
  return sink;
}

}  // namespace

void warn(const std::string& message) {
  if (auto& sink = current_sink()) {
    sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningSink set_warning_sink(WarningSink sink) {
  return std::exchange(current_sink(), std::move(sink));
}

}  // namespace sicr
