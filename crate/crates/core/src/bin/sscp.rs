fn main() {
    std::process::exit(sscp::cli::main_with_args(std::env::args_os()));
}
