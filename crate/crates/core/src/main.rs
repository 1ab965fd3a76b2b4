fn main() {
    std::process::exit(embcomp::cli::run(std::env::args_os()));
}
