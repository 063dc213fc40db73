fn main() {
    std::process::exit(decarb_core::cli::run());
}
