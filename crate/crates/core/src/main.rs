fn main() -> std::process::ExitCode {
    amelump::cli::main()
}
