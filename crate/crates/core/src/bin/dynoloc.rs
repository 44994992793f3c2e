fn main() {
    std::process::exit(dynoloc::cli::main());
}
