#pragma once

namespace dsreg::cli {

// Exit codes of the command-line driver.
enum ExitCode : int {
    exit_converged = 0,
    exit_other = 1,
    exit_max_iterations = 2,
    exit_no_overlap = 3,
    exit_invalid_input = 4,
    exit_io = 5,
    exit_gauge = 6,
    exit_invalid_volume = 7,
};

int run(int argc, char** argv);

} // namespace dsreg::cli
