fn main() {
    std::process::exit(varqt::cli::main());
}
