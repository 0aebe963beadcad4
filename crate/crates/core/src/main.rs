fn main() -> std::process::ExitCode {
    qrf_vimp::cli::main()
}
