fn main() -> std::process::ExitCode {
    gmac::cli::main()
}
