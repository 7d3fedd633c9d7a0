fn main() {
    std::process::exit(sead::cli::main());
}
