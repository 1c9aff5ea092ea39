// Copyright 2026 The MRT Codec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace mrt {

/// Runs the `mrt` command line. Returns 0 on success, 2 for usage errors and
/// unreadable inputs, 1 for any other failure.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mrt
