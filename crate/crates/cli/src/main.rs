fn main() -> std::process::ExitCode {
    ssmf_cli::main_with_args(std::env::args_os())
}
