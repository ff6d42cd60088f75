fn main() {
    std::process::exit(lcc_cli::main_with_args(std::env::args_os()));
}
