fn main() -> std::process::ExitCode {
    hbe::cli::main_entry()
}
