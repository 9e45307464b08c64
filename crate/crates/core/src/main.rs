fn main() {
    std::process::exit(forge_core::cli::main());
}
