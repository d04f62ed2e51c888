fn main() {
    std::process::exit(mfbsde::cli::main());
}
