fn main() {
    std::process::exit(ialgca::cli::main());
}
