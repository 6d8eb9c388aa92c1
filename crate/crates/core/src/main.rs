fn main() {
    std::process::exit(sumn::cli::main_with(std::env::args_os()));
}
