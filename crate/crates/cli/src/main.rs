fn main() {
    std::process::exit(lumpkit::cli::run(std::env::args_os()));
}
