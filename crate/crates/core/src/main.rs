fn main() {
    std::process::exit(magec::cli::run_cli(std::env::args_os()));
}
