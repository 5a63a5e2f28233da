fn main() -> std::process::ExitCode {
    acuity::cli::main()
}
