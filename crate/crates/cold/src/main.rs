fn main() {
    std::process::exit(cold::cli::main());
}
