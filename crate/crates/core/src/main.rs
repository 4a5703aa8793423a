fn main() -> std::process::ExitCode {
    sliceq_core::cli::run(std::env::args_os())
}
