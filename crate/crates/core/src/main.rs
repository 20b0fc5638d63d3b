fn main() {
    std::process::exit(ordinal_affect::cli::run(std::env::args_os()));
}
