fn main() {
    std::process::exit(hcm::cli::run(std::env::args_os()));
}
