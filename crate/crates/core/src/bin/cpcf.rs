fn main() -> std::process::ExitCode {
    cpcf::cli::main_with_args(std::env::args_os())
}
