fn main() {
    std::process::exit(mlsfft::cli::run(std::env::args_os()));
}
