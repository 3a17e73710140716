fn main() {
    std::process::exit(spleenlen::cli::run(std::env::args_os()));
}
