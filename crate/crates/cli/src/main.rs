fn main() {
    std::process::exit(fls_cli::main_with_args(std::env::args_os()));
}
