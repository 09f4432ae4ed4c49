fn main() {
    std::process::exit(veritas_cli::cli::run(std::env::args_os()));
}
