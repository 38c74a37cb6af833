fn main() {
    sympal::cli::init_threads();
    let code = sympal::cli::run(std::env::args_os());
    std::process::exit(code);
}
