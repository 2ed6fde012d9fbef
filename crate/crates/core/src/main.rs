fn main() {
    std::process::exit(mimlfast::cli::run(std::env::args_os()));
}
