fn main() -> std::process::ExitCode {
    nerfplus::cli::main_with_args(std::env::args_os())
}
