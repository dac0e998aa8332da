fn main() -> std::process::ExitCode {
    sequnlearn::cli::main()
}
