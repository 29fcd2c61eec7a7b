fn main() {
    std::process::exit(structpen::cli::run(std::env::args_os()));
}
