fn main() {
    std::process::exit(dgsm::cli::run());
}
