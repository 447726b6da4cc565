fn main() {
    std::process::exit(lsr::cli::run(std::env::args_os()));
}
