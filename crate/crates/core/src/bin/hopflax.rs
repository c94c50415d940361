fn main() {
    std::process::exit(hopflax_core::cli::main_with_args(std::env::args_os()));
}
