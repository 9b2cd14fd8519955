fn main() {
    std::process::exit(boldkit_cli::run(std::env::args_os()));
}
