fn main() {
    std::process::exit(gsedd::cli::main_with_args(std::env::args_os()));
}
