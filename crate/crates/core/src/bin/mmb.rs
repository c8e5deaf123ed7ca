fn main() {
    std::process::exit(mmb_core::cli::main_with_args(std::env::args_os()));
}
