fn main() {
    std::process::exit(gemeit::cli::main_with(std::env::args()));
}
