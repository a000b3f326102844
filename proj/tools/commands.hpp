#pragma once

// Subcommand entry point: parses argv, routes to the owning module. Exit
// codes: 0 success, 1 usage error, 2 data error.
int dispatch(int argc, const char* const* argv);
