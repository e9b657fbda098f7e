fn main() {
    std::process::exit(slipflow::cli::main_with_args(std::env::args_os()));
}
