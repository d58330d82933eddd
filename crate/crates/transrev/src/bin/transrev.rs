fn main() {
    std::process::exit(transrev::cli::run(std::env::args_os()));
}
