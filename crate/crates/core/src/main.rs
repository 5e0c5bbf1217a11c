fn main() {
    std::process::exit(amc::cli::run(std::env::args_os()));
}
