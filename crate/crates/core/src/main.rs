fn main() {
    std::process::exit(cascadefit::cli::run());
}
