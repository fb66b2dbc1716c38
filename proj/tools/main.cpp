// Copyright 2026 The tsse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "commands.hpp"

int main(int argc, char** argv) { return tsse::cli::run(argc, argv); }
