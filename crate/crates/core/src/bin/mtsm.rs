fn main() {
    std::process::exit(mtsm::cli::run(std::env::args_os()));
}
