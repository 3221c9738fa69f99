fn main() {
    std::process::exit(scanpath::cli::run(std::env::args_os()));
}
