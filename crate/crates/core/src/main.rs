fn main() {
    std::process::exit(gl_dichotomy::cli::main_with_args(std::env::args_os()));
}
