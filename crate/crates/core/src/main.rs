fn main() {
    std::process::exit(chainlabel::cli::main());
}
