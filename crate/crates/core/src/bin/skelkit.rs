fn main() {
    std::process::exit(skelkit::cli::main_with_args(std::env::args_os()));
}
