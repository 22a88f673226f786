fn main() {
    std::process::exit(sspfield::cli::run(std::env::args_os()));
}
