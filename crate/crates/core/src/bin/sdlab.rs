fn main() {
    std::process::exit(sdlab::cli::main_with_args(std::env::args_os()));
}
