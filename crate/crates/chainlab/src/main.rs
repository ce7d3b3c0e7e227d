fn main() {
    std::process::exit(chainlab::cli::run(std::env::args_os()));
}
