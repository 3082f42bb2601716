fn main() {
    std::process::exit(sstnet::cli::main_with_args(std::env::args().skip(1)));
}
