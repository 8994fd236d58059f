fn main() {
    std::process::exit(fer_cli::main_with_args(std::env::args_os()));
}
