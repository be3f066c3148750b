fn main() {
    std::process::exit(pctrack::cli::run(std::env::args_os()));
}
