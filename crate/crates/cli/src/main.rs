fn main() {
    std::process::exit(fracgs_cli::run_command(std::env::args_os()));
}
