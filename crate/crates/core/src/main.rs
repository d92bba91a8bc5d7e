fn main() {
    std::process::exit(gsrt::cli::run(std::env::args_os()));
}
