fn main() -> std::process::ExitCode {
    echographs::cli::main()
}
