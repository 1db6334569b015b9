fn main() {
    std::process::exit(sanr::cli::run(std::env::args_os()));
}
