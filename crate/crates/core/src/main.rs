fn main() {
    std::process::exit(pvseval::cli::run(std::env::args_os()));
}
