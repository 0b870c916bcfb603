fn main() {
    std::process::exit(csdr::cli::main_exit_code());
}
