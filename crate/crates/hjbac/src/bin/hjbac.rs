fn main() {
    std::process::exit(hjbac::cli::run(std::env::args_os()));
}
