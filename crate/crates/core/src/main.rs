fn main() {
    std::process::exit(sarcam::cli::main());
}
