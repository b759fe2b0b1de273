fn main() {
    std::process::exit(infomax_lab::cli::main());
}
