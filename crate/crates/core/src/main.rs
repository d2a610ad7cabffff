fn main() {
    std::process::exit(psalm::cli::run_cli(std::env::args_os()));
}
