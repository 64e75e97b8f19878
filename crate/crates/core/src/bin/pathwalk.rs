fn main() {
    std::process::exit(pathwalk::cli::run(std::env::args_os()));
}
