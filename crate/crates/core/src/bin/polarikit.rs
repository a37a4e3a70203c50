fn main() {
    std::process::exit(polarikit::cli::main_with_args(std::env::args_os()));
}
