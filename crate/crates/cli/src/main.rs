fn main() {
    std::process::exit(avsumm_cli::main_with_args(std::env::args_os()));
}
