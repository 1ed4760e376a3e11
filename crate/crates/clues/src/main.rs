fn main() -> std::process::ExitCode {
    clues::cli::main()
}
