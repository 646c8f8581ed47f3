fn main() {
    std::process::exit(hiflow_cli::main_with_args(std::env::args_os()));
}
