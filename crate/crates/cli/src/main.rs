fn main() {
    std::process::exit(faithful_cli::main_with_args(std::env::args_os()));
}
