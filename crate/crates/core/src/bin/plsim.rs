fn main() -> std::process::ExitCode {
    promise_lease::cli::main()
}
