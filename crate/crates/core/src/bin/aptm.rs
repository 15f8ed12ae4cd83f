fn main() -> std::process::ExitCode {
    aptm::cli::main()
}
