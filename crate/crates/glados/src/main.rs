fn main() {
    std::process::exit(glados::cli::main_with(std::env::args_os()));
}
