fn main() -> std::process::ExitCode {
    nngp_card::cli::main_entry()
}
