fn main() {
    std::process::exit(mcinfonce::cli::run(std::env::args_os()));
}
