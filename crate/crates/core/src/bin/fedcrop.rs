fn main() {
    std::process::exit(fedcrop::cli::main());
}
