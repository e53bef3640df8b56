fn main() -> std::process::ExitCode {
    safeguarded_polyak::cli::main()
}
