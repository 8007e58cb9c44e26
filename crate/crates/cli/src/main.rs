fn main() {
    std::process::exit(finrag_cli::run_cli(std::env::args_os()));
}
