fn main() {
    std::process::exit(marginlm::cli::run(std::env::args_os()));
}
