use std::process::ExitCode;

fn main() -> ExitCode {
    fedmesh::cli::main()
}
