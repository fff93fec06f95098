fn main() -> std::process::ExitCode {
    plaplab::cli::main()
}
