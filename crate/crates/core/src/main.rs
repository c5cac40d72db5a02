fn main() {
    std::process::exit(psa_core::cli::run(std::env::args_os()));
}
