fn main() {
    std::process::exit(spinfp::cli::main_with_args(std::env::args_os()));
}
