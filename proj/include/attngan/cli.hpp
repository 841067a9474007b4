#ifndef ATTNGAN_CLI_HPP_
#define ATTNGAN_CLI_HPP_

namespace attngan::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2 };

/// Entry point of the `attngan` tool: synth, augment, train, infer, eval and
/// gradcheck subcommands. Returns the process exit code.
int run(int argc, char** argv);

}  // namespace attngan::cli

#endif  // ATTNGAN_CLI_HPP_
