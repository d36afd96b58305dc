#pragma once

#include <functional>
#include <string>

namespace aqcl {

// Warnings go to stderr unless a sink is installed (the C API forwards them
// to a user callback).
using LogSink = std::function<void(const std::string&)>;

void set_log_sink(LogSink sink);
void log_warning(const std::string& message);

}  // namespace aqcl
