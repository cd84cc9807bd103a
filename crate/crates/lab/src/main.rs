fn main() {
    std::process::exit(dla_lab::cli::run(std::env::args_os()));
}
