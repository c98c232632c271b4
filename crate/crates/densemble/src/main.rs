fn main() {
    std::process::exit(densemble::cli::run());
}
