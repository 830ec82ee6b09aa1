fn main() {
    std::process::exit(degma::cli::main_entry(std::env::args_os()));
}
