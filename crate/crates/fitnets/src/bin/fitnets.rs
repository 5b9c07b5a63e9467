fn main() {
    std::process::exit(fitnets::cli::run(std::env::args_os()));
}
